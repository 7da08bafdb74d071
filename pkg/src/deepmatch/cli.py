"""Command-line interface: ``deepmatch {match,match-invariant,flow,eval,selftest}``."""

import argparse
import os
import sys
import time
import tracemalloc

import numpy as np

from .correspondence import MatchParams, deep_matching
from .descriptor import DescriptorParams
from .evalio import (
    GroundTruthFlow,
    coverage,
    evaluate,
    find_pairs,
    mean_report,
    read_flo,
    read_matches,
    read_occlusion_mask,
    write_flo,
    write_matches,
)
from .flow import FlowParams, rasterize_matches, solve_flow
from .imageio import load_image, save_image
from .invariance import match_invariant
from .pyramid import analytic_nbytes
from .viz import draw_matches, flow_to_color

ENV_THREADS = "DEEPMATCH_THREADS"


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get(ENV_THREADS)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise SystemExit(f"error: {ENV_THREADS} must be an integer, got {env!r}")
    return 1


def _match_params(args):
    desc = DescriptorParams.for_uncompressed() if args.uncompressed else DescriptorParams()
    return MatchParams(
        resolution=args.resolution,
        dict_size=args.dict_size,
        lam=args.lam,
        descriptor=desc,
        seed=args.seed,
        n_threads=_threads(args),
    )


def _flow_params(args):
    overrides = {}
    for name in ("alpha", "beta", "gamma", "delta"):
        val = getattr(args, name, None)
        if val is not None:
            overrides[name] = val
    return FlowParams(**overrides)


def _run_matching(img1, img2, args):
    params = _match_params(args)
    if args.invariant:
        return match_invariant(img1, img2, params, n_jobs=params.n_threads)
    return deep_matching(img1, img2, params)


def _measured(fn):
    tracemalloc.start()
    t0 = time.perf_counter()
    try:
        out = fn()
    finally:
        elapsed = time.perf_counter() - t0
        _, peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()
    return out, elapsed, peak


def cmd_match(args):
    img1, img2 = load_image(args.img1), load_image(args.img2)
    matches, elapsed, peak = _measured(lambda: _run_matching(img1, img2, args))
    write_matches(args.output, matches)
    r = args.resolution
    w1 = (max(1, round(img1.shape[0] * r)), max(1, round(img1.shape[1] * r)))
    w2 = (max(1, round(img2.shape[0] * r)), max(1, round(img2.shape[1] * r)))
    print(f"matches {len(matches)}")
    print(f"coverage {coverage(matches, img1.shape[:2]):.4f}")
    print(f"time_s {elapsed:.3f}")
    print(f"peak_memory_mb {peak / 2**20:.1f} (traced)")
    if not args.invariant and args.dict_size == 0:
        print(f"pyramid_memory_mb {analytic_nbytes(w1, w2) / 2**20:.1f} (analytic)")
    if args.viz:
        save_image(args.viz, draw_matches(img1, matches))
    return 0


def cmd_flow(args):
    img1, img2 = load_image(args.img1), load_image(args.img2)
    if img1.shape[:2] != img2.shape[:2]:
        raise ValueError(f"image sizes differ: {img1.shape[:2]} vs {img2.shape[:2]}")
    if img1.ndim != img2.ndim:
        img1 = img1 if img1.ndim == 3 else np.repeat(img1[:, :, None], 3, axis=2)
        img2 = img2 if img2.ndim == 3 else np.repeat(img2[:, :, None], 3, axis=2)
    params = _flow_params(args)
    t0 = time.perf_counter()
    if args.matches:
        matches = read_matches(args.matches)
    elif args.no_matches:
        matches = None
    else:
        matches = _run_matching(img1, img2, args)
    mf = rasterize_matches(matches, img1, img2, params) if matches is not None else None
    if mf is not None and mf.skipped:
        print(f"warning: skipped {mf.skipped} matches outside the images", file=sys.stderr)
    flow = solve_flow(img1, img2, mf, params)
    write_flo(args.output, flow)
    print(f"matches {0 if matches is None else len(matches)}")
    print(f"time_s {time.perf_counter() - t0:.3f}")
    if args.viz:
        save_image(args.viz, flow_to_color(flow))
    return 0


def _load_prediction(path):
    with open(path, "rb") as fh:
        tag = fh.read(4)
    if tag == b"PIEH":
        return "flow", read_flo(path).flow.astype(np.float64)
    return "matches", read_matches(path)


def cmd_eval(args):
    if os.path.isdir(args.prediction):
        return _eval_directory(args)
    if args.gt is None:
        raise ValueError("eval needs a ground-truth .flo unless given a directory")
    gt = read_flo(args.gt)
    mask = None
    if args.occlusion:
        mask = ~read_occlusion_mask(args.occlusion)
    kind, pred = _load_prediction(args.prediction)
    if kind == "flow":
        if pred.shape != gt.flow.shape:
            raise ValueError(f"prediction shape {pred.shape} does not match ground truth {gt.flow.shape}")
        rep = evaluate(flow=pred, gt=gt, T=args.threshold, mask=mask)
    else:
        rep = evaluate(matches=pred, gt=gt, T=args.threshold)
    _print_report(rep, args)
    return 0


def _eval_directory(args):
    pairs = [p for p in find_pairs(args.prediction) if p[2] is not None]
    if not pairs:
        raise ValueError(f"no '<name>_1.*', '<name>_2.*', '<name>.flo' triples in {args.prediction}")
    reports = []
    for p1, p2, pgt in pairs:
        img1, img2 = load_image(p1), load_image(p2)
        gt = read_flo(pgt)
        matches = _run_matching(img1, img2, args)
        flow = None
        if args.with_flow:
            params = _flow_params(args)
            flow = solve_flow(img1, img2, rasterize_matches(matches, img1, img2, params), params)
        rep = evaluate(matches=matches, flow=flow, gt=gt, T=args.threshold)
        print(f"# {os.path.basename(p1)} accuracy {rep.accuracy_at_T:.4f} epe {rep.epe:.4f}")
        reports.append(rep)
    _print_report(mean_report(reports), args)
    return 0


def _print_report(rep, args):
    sys.stdout.write(rep.to_json() + "\n" if args.json else rep.to_text())


def cmd_selftest(args):
    """Synthetic end-to-end check: translated texture through matching, flow and eval."""
    from scipy import ndimage

    rng = np.random.default_rng(args.seed)
    tex = ndimage.gaussian_filter(rng.random((160, 160)), 1.5)
    tex = (tex - tex.min()) / (tex.max() - tex.min())
    dx, dy = 6, 4
    img1 = tex[16:144, 16:144]
    img2 = tex[16 - dy:144 - dy, 16 - dx:144 - dx]
    # pixels whose target leaves image 2 have no ground truth
    valid = np.zeros((128, 128), dtype=bool)
    valid[: 128 - dy, : 128 - dx] = True
    gt = GroundTruthFlow(np.broadcast_to(np.array([dx, dy], float), (128, 128, 2)).copy(), valid)
    params = MatchParams(n_threads=_threads(args), seed=args.seed)
    matches = deep_matching(img1, img2, params)
    rep = evaluate(matches=matches, gt=gt)
    flow = solve_flow(img1, img2, rasterize_matches(matches, img1, img2))
    err = np.hypot(flow[..., 0] - dx, flow[..., 1] - dy)[8:-8, 8:-8].mean()
    checks = [
        ("matching accuracy@10 >= 0.9", rep.accuracy_at_T >= 0.9),
        ("coverage >= 0.95", rep.coverage >= 0.95),
        ("flow interior EPE < 0.5", err < 0.5),
    ]
    for name, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return 0 if all(ok for _, ok in checks) else 1


def _add_match_flags(p):
    p.add_argument("--resolution", type=float, default=0.5, help="working scale R in (0, 1]")
    p.add_argument("--dict-size", type=int, default=0, help="prototype count D; 0 = exact")
    p.add_argument("--lambda", dest="lam", type=float, default=1.4, help="rectification exponent")
    p.add_argument("--invariant", action="store_true", help="scale/rotation invariant mode")
    p.add_argument("--uncompressed", action="store_true", help="descriptor settings for lossless inputs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None, help=f"worker threads (default ${ENV_THREADS} or 1)")


def _add_flow_flags(p):
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--delta", type=float, default=None)


def build_parser():
    ap = argparse.ArgumentParser(prog="deepmatch", description="Dense matching and optical flow.")
    sub = ap.add_subparsers(dest="command", required=True)

    m = sub.add_parser("match", help="match two images")
    m.add_argument("img1")
    m.add_argument("img2")
    m.add_argument("-o", "--output", required=True, help="match text file")
    m.add_argument("--viz", help="image of match starts colored by displacement")
    _add_match_flags(m)
    m.set_defaults(func=cmd_match)

    mi = sub.add_parser("match-invariant", help="scale/rotation invariant matching")
    mi.add_argument("img1")
    mi.add_argument("img2")
    mi.add_argument("-o", "--output", required=True)
    mi.add_argument("--viz")
    _add_match_flags(mi)
    mi.set_defaults(func=cmd_match, invariant=True)

    f = sub.add_parser("flow", help="estimate optical flow")
    f.add_argument("img1")
    f.add_argument("img2")
    f.add_argument("-o", "--output", required=True, help=".flo file")
    f.add_argument("--matches", help="precomputed match file")
    f.add_argument("--no-matches", action="store_true", help="run without a match term")
    f.add_argument("--viz", help="color-coded flow image")
    _add_match_flags(f)
    _add_flow_flags(f)
    f.set_defaults(func=cmd_flow)

    e = sub.add_parser("eval", help="score matches or flow against ground truth")
    e.add_argument("prediction", help="match file, .flo, or a directory of image pairs")
    e.add_argument("gt", nargs="?", help="ground-truth .flo")
    e.add_argument("--threshold", type=float, default=10.0, help="accuracy threshold T in pixels")
    e.add_argument("--occlusion", help="PGM mask, nonzero = occluded (excluded from EPE)")
    e.add_argument("--json", action="store_true")
    e.add_argument("--with-flow", action="store_true", help="directory mode: also run flow")
    _add_match_flags(e)
    _add_flow_flags(e)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("selftest", help="synthetic end-to-end check")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threads", type=int, default=None)
    s.set_defaults(func=cmd_selftest)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
