"""Command-line front end.

Every command that writes files also writes `<out>.manifest.json`, holding the
fully resolved argument list; `dimerlab --manifest FILE` replays it and
reproduces the outputs byte for byte.
"""

import argparse
import csv
import json
import math
import sys
import xml.etree.ElementTree as ET

import numpy as np

from . import __version__, acceptance, fluct, gibbs, shape, tgraph
from .errors import DimerlabError, NumericalError, ValidationError
from .kasteleyn import assemble, count_matchings, edge_probabilities
from .lattice import (
    HeightField, Matching, edge_type, face_position, faces_of_black, faces_of_white,
    height_field, region_from_json,
)
from .sampler import default_threads, sample_glauber, sample_many

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

LOZENGE_COLORS = {1: "#e8c547", 2: "#5c80bc", 3: "#cdd1c4"}


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------- parsing helpers

def parse_pair(text):
    try:
        m, n = (int(x) for x in text.split(","))
    except ValueError as exc:
        raise UsageError(f"expected m,n but got {text!r}") from exc
    return (m, n)


def parse_slope(text):
    try:
        parts = [float(x) for x in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"expected pa,pb,pc but got {text!r}") from exc
    if len(parts) != 3:
        raise UsageError("a slope needs three components")
    return gibbs.slope_from_p(*parts)


def parse_lambda(text):
    """'auto', an angle as a fraction of a full turn, or 're,im'."""
    if text == "auto":
        return "auto"
    try:
        if "," in text:
            re_, im_ = (float(x) for x in text.split(","))
            lam = complex(re_, im_)
        else:
            lam = complex(math.cos(2 * math.pi * float(text)), math.sin(2 * math.pi * float(text)))
    except ValueError as exc:
        raise UsageError(f"cannot read lambda {text!r}") from exc
    if abs(abs(lam) - 1) > 1e-12:
        raise UsageError("lambda must have modulus 1")
    return lam


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from exc


def load_region(arg):
    """A region JSON file, or an inline JSON object."""
    obj = json.loads(arg) if arg.lstrip().startswith("{") else read_json(arg)
    if "region" in obj and "kind" not in obj:
        obj = obj["region"]
    return region_from_json(obj), obj


# ---------------------------------------------------------------- serialization

def dump_json(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in rows:
            out.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def matching_to_json(matching, index=None):
    obj = {"region": matching.region.to_json(), "dimers": matching.to_triples()}
    if index is not None:
        obj["index"] = index
    return obj


def matching_from_json(obj):
    region = region_from_json(obj["region"])
    return Matching.from_triples(region, obj["dimers"])


def read_matchings(path):
    """One matching from a JSON file, or several from JSON lines."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        try:
            objs = [json.loads(text)]
        except json.JSONDecodeError:
            objs = [json.loads(ln) for ln in text.splitlines() if ln.strip()]
        return [matching_from_json(o) for o in objs]
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is neither JSON nor JSON lines: {exc}") from exc
    except (KeyError, TypeError) as exc:
        raise UsageError(f"{path} does not describe a matching") from exc


def _pair(z):
    return [float(z.real), float(z.imag)]


def tgraph_to_json(tg, exit_step):
    chain = tgraph.markov_chain(tg)
    return {
        "p": list(tg.slope.p),
        "lambda": _pair(tg.lam),
        "region": tg.region.to_json(),
        "exit_step": int(exit_step),
        "vertices": [[f[0], f[1], *_pair(tg.psi[f])] for f in tg.vertices],
        "segments": [{"black": list(b), "start": _pair(e.start), "end": _pair(e.end),
                      "vertices": [list(f) for f in e.vertices]}
                     for b, e in sorted(tg.complete_edges.items())],
        "chain": [{"vertex": list(f), "transitions": [[g[0], g[1], float(p)] for g, p in chain.transitions[f]]}
                  for f in tg.vertices if f in chain.index],
        "roots": [list(f) for f in tg.roots],
    }


def tgraph_from_json(obj):
    """Rebuild the T-graph from its parameters and check it against the stored data."""
    try:
        slope = gibbs.slope_from_p(*obj["p"])
        region = region_from_json(obj["region"])
        lam = complex(*obj["lambda"])
        exit_step = int(obj["exit_step"])
    except (KeyError, TypeError) as exc:
        raise UsageError("T-graph file lacks p, lambda, region or exit_step") from exc
    tg, _ = tgraph.build_constant_slope_tgraph(slope, region, lam, exit_step)
    if tgraph_to_json(tg, exit_step) != obj:
        raise ValidationError("T-graph file does not match the graph its parameters produce")
    return tg, exit_step


# ---------------------------------------------------------------- SVG

def _num(x):
    s = f"{round(float(x), 6):.6f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def _svg_root(points, margin=0.5):
    xs = [p.real for p in points]
    ys = [-p.imag for p in points]
    x0, y0 = min(xs) - margin, min(ys) - margin
    w, h = max(xs) - min(xs) + 2 * margin, max(ys) - min(ys) + 2 * margin
    return ET.Element("svg", {
        "xmlns": "http://www.w3.org/2000/svg",
        "viewBox": f"{_num(x0)} {_num(y0)} {_num(w)} {_num(h)}",
        "width": _num(40 * w), "height": _num(40 * h),
    })


def _pts(zs):
    return " ".join(f"{_num(z.real)},{_num(-z.imag)}" for z in zs)


def _lozenge(w, b):
    fs = sorted(set(faces_of_white(w)) | set(faces_of_black(b)))
    zs = [face_position(*f) for f in fs]
    c = sum(zs) / len(zs)
    return sorted(zs, key=lambda z: math.atan2((z - c).imag, (z - c).real))


def export_svg(obj, path):
    """Deterministic SVG of a Matching (lozenges), TGraph (one line per complete
    edge) or HeightField (faces shaded by height)."""
    if isinstance(obj, Matching):
        shapes = [(edge_type(w, b), _lozenge(w, b)) for w, b in sorted(obj.pairs.items())]
        root = _svg_root([z for _, zs in shapes for z in zs])
        for k, zs in shapes:
            ET.SubElement(root, "polygon", {"points": _pts(zs), "fill": LOZENGE_COLORS[k],
                                            "stroke": "#222222", "stroke-width": "0.04"})
    elif isinstance(obj, tgraph.TGraph):
        edges = sorted(obj.complete_edges.items())
        root = _svg_root([z for _, e in edges for z in (e.start, e.end)], margin=0.05 * obj.scale)
        width = _num(0.01 * obj.scale)
        for b, e in edges:
            ET.SubElement(root, "line", {"x1": _num(e.start.real), "y1": _num(-e.start.imag),
                                         "x2": _num(e.end.real), "y2": _num(-e.end.imag),
                                         "stroke": "#222222", "stroke-width": width})
    elif isinstance(obj, HeightField):
        items = sorted(obj.values.items())
        lo = min(h for _, h in items)
        hi = max(h for _, h in items)
        root = _svg_root([face_position(*f) for f, _ in items])
        for f, h in items:
            z = face_position(*f)
            level = 0 if hi == lo else round(230 * (h - lo) / (hi - lo))
            ET.SubElement(root, "circle", {"cx": _num(z.real), "cy": _num(-z.imag), "r": "0.3",
                                           "fill": f"#{level:02x}{level:02x}{level:02x}"})
    else:
        raise ValidationError(f"cannot render {type(obj).__name__}")
    ET.indent(root)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(ET.tostring(root, encoding="unicode") + "\n")


# ---------------------------------------------------------------- commands

def cmd_count(args, ctx):
    region, _ = load_region(args.region)
    print(count_matchings(region))


def cmd_probs(args, ctx):
    region, _ = load_region(args.region)
    probs = edge_probabilities(assemble(region))
    rows = [(w[0], w[1], edge_type(w, b), p) for (w, b), p in sorted(probs.items())]
    write_csv(args.out, ["white_m", "white_n", "edge_type", "probability"], rows)
    ctx["outputs"].append(args.out)


def cmd_sample(args, ctx):
    region, _ = load_region(args.region)
    if args.n < 1:
        raise UsageError("--n must be positive")
    if args.method == "exact":
        samples = sample_many(assemble(region), args.n, args.seed, ctx["threads"])
    else:
        samples = []
        sample_glauber(region, args.seed, args.sweeps * args.n, record_every=args.sweeps, records=samples)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        for i, m in enumerate(samples):
            fh.write(json.dumps(matching_to_json(m, i), sort_keys=True) + "\n")
    ctx["outputs"].append(args.out)


def cmd_render(args, ctx):
    matchings = read_matchings(args.matching)
    if not 0 <= args.index < len(matchings):
        raise UsageError(f"--index {args.index} out of range for {len(matchings)} matchings")
    m = matchings[args.index]
    export_svg(height_field(m) if args.heights else m, args.out)
    ctx["outputs"].append(args.out)


def cmd_heights(args, ctx):
    matchings = read_matchings(args.matching)
    if not 0 <= args.index < len(matchings):
        raise UsageError(f"--index {args.index} out of range for {len(matchings)} matchings")
    height_field(matchings[args.index]).write_csv(args.out)
    ctx["outputs"].append(args.out)


def cmd_kernel(args, ctx):
    s = parse_slope(args.p)
    out = {"p": list(s.p), "m": args.m, "n": args.n, "kernel": gibbs.bulk_kernel(s, args.m, args.n)}
    if (args.m, args.n) != (0, 0):
        out["asymptotic"] = gibbs.bulk_kernel_asymptotic(s, args.m, args.n)
    dump_json(out, args.out)
    if args.out not in (None, "-"):
        ctx["outputs"].append(args.out)


def cmd_sigma(args, ctx):
    if args.grid < 1:
        raise UsageError("--grid must be positive")
    write_csv(args.out, ["p_a", "p_b", "p_c", "sigma"], gibbs.surface_tension_grid(args.grid))
    ctx["outputs"].append(args.out)


def cmd_tgraph(args, ctx):
    s = parse_slope(args.p)
    region, _ = load_region(args.region)
    lam = tgraph.resolve_lambda(s, region, parse_lambda(args.lam), args.seed)
    exit_step = args.exit_step if args.exit_step is not None else tgraph.default_exit_step(region)
    tg, _ = tgraph.build_constant_slope_tgraph(s, region, lam, exit_step)
    tgraph.check_embedding(tg)
    ctx["resolved"]["lambda"] = _pair(lam)
    ctx["resolved"]["exit_step"] = exit_step
    dump_json(tgraph_to_json(tg, exit_step), args.out)
    ctx["outputs"].append(args.out)
    if args.svg:
        export_svg(tg, args.svg)
        ctx["outputs"].append(args.svg)


def cmd_greens(args, ctx):
    tg, _ = tgraph_from_json(read_json(args.tgraph))
    w = parse_pair(args.face)
    if w not in tg.region.whites:
        raise UsageError(f"{w} is not a white triangle of the T-graph")
    chain = tgraph.markov_chain(tg)
    field = tgraph.conjugate_greens(tg, chain, w)
    rows = [(f[0], f[1], float(tg.psi[f].real), float(tg.psi[f].imag), field[f]) for f in tg.vertices]
    write_csv(args.out, ["vertex_m", "vertex_n", "x", "y", "value"], rows)
    ctx["outputs"].append(args.out)


def cmd_shape(args, ctx):
    if args.grid < 3:
        raise UsageError("--grid must be at least 3")
    limit = math.sqrt(shape.INSCRIBED_R2)
    h = 2 * limit / (args.grid - 1)
    xs = -limit + h * np.arange(args.grid)
    rows = []
    for x in xs:
        for y in xs:
            if shape.norm2(x, y) >= shape.INSCRIBED_R2 * (1 - 1e-9):
                continue
            if args.what == "bpp-phi":
                v = shape.phi_bpp(x, y)
            elif args.what == "beltrami":
                v = complex(shape.beltrami_from_phi(shape.phi_bpp(x, y)))
            else:
                # pointwise residual with a step well inside the disk
                step = min(h, (limit - math.sqrt(shape.norm2(x, y))) / 4)
                if step <= 0:
                    continue
                v = complex(shape.burgers_residual_at(shape.phi_bpp, [(x, y)], step)[0])
            rows.append((float(x), float(y), float(v.real), float(v.imag)))
    write_csv(args.out, ["x", "y", "re", "im"], rows)
    ctx["outputs"].append(args.out)


def _prediction(kind, region_obj, region):
    if kind == "flat":
        if region_obj.get("kind") != "disk":
            raise UsageError("--predict flat needs a disk region")
        return fluct.flat_disk_prediction(float(region_obj["radius"]))
    if region_obj.get("kind") != "hexagon" or not region_obj["a"] == region_obj["b"] == region_obj["c"]:
        raise UsageError("--predict bpp needs a hexagon region with equal sides")
    return fluct.bpp_prediction(int(region_obj["a"]))


def _straight(region, faces, dirs):
    if dirs is None:
        # head for the nearest boundary in some lattice direction
        dirs = []
        for f in faces:
            best = None
            for d in range(6):
                try:
                    length = len(fluct.path_to_boundary(region, f, d))
                except ValidationError:
                    continue
                if best is None or length < best[0]:
                    best = (length, d)
            if best is None:
                raise UsageError(f"no straight path from {f} to the boundary")
            dirs.append(best[1])
    return fluct.straight_request(region, faces, dirs), dirs


def cmd_covariance(args, ctx):
    region, region_obj = load_region(args.region)
    f1, f2 = parse_pair(args.f1), parse_pair(args.f2)
    req, dirs = _straight(region, [f1, f2], _dirs(args.dirs, 2))
    ctx["resolved"]["dirs"] = dirs
    out = {"f1": list(f1), "f2": list(f2)}
    system = assemble(region)
    if args.exact:
        out["exact"] = fluct.exact_height_covariance(system, req)
    if args.predict:
        pred = _prediction(args.predict, region_obj, region)
        out["predicted"] = fluct.HEIGHT_FACTOR * fluct.gff_covariance_prediction(pred, f1, f2)
        if "exact" in out:
            out["ratio"] = out["exact"] / out["predicted"]
    if args.samples:
        samples = sample_many(system, args.samples, args.seed, ctx["threads"])
        est, err = fluct.mc_height_covariance(samples, f1, f2, region.start)
        out["monte_carlo"] = est
        out["monte_carlo_stderr"] = err
    dump_json(out, args.out)
    ctx["outputs"].append(args.out)


def _dirs(text, k):
    if text is None:
        return None
    dirs = [int(x) for x in text.split(",")]
    if len(dirs) != k or any(not 0 <= d < 6 for d in dirs):
        raise UsageError(f"--dirs needs {k} values in 0..5")
    return dirs


def cmd_moments(args, ctx):
    region, _ = load_region(args.region)
    points = [parse_pair(p) for p in args.points.split(";") if p.strip()]
    if len(points) != args.k:
        raise UsageError(f"--k {args.k} but {len(points)} points given")
    req, dirs = _straight(region, points, _dirs(args.dirs, args.k))
    ctx["resolved"]["dirs"] = dirs
    system = assemble(region)
    out = {"k": args.k, "points": [list(p) for p in points],
           "moment": fluct.exact_higher_moment(system, req)}
    cov = {}
    for i in range(args.k):
        for j in range(i + 1, args.k):
            sub = fluct.MomentRequest((points[i], points[j]), (req.paths[i], req.paths[j]))
            cov[i, j] = cov[j, i] = fluct.exact_height_covariance(system, sub)
    out["wick"] = fluct.wick_from_covariances(lambda i, j: cov[i, j], args.k)
    dump_json(out, args.out)
    ctx["outputs"].append(args.out)


def cmd_verify(args, ctx):
    numbers = acceptance.QUICK if args.suite == "quick" else sorted(acceptance.CRITERIA)
    ok = True
    for k in numbers:
        res = acceptance.CRITERIA[k]()
        print(res.line(), flush=True)
        ok &= res.passed
    return EXIT_OK if ok else EXIT_FAILED


COMMANDS = {
    "count": cmd_count, "probs": cmd_probs, "sample": cmd_sample, "render": cmd_render, "heights": cmd_heights,
    "kernel": cmd_kernel, "sigma": cmd_sigma, "tgraph": cmd_tgraph, "greens": cmd_greens,
    "shape": cmd_shape, "covariance": cmd_covariance, "moments": cmd_moments, "verify": cmd_verify,
}


def build_parser():
    p = _Parser(prog="dimerlab", description="Honeycomb dimer model toolkit.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: DIMERLAB_THREADS or 1)")
    p.add_argument("--manifest", help="replay the run recorded in a manifest file")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    c = sub.add_parser("count", help="number of lozenge tilings")
    c.add_argument("--region", required=True)

    c = sub.add_parser("probs", help="edge probabilities as CSV")
    c.add_argument("--region", required=True)
    c.add_argument("--out", required=True)

    c = sub.add_parser("sample", help="uniform random tilings as JSON lines")
    c.add_argument("--region", required=True)
    c.add_argument("--n", type=int, default=1)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--method", choices=("exact", "glauber"), default="exact")
    c.add_argument("--sweeps", type=int, default=10, help="Glauber sweeps between records")
    c.add_argument("--out", required=True)

    c = sub.add_parser("render", help="SVG of a tiling or its height function")
    c.add_argument("--matching", required=True)
    c.add_argument("--index", type=int, default=0)
    c.add_argument("--heights", action="store_true")
    c.add_argument("--out", required=True)

    c = sub.add_parser("heights", help="height function of a tiling as CSV")
    c.add_argument("--matching", required=True)
    c.add_argument("--index", type=int, default=0)
    c.add_argument("--out", required=True)

    c = sub.add_parser("kernel", help="bulk inverse Kasteleyn entry")
    c.add_argument("--p", required=True)
    c.add_argument("--m", type=int, required=True)
    c.add_argument("--n", type=int, required=True)
    c.add_argument("--out")

    c = sub.add_parser("sigma", help="surface tension on a simplex grid")
    c.add_argument("--grid", type=int, default=50)
    c.add_argument("--out", required=True)

    c = sub.add_parser("tgraph", help="constant-slope T-graph of a region")
    c.add_argument("--p", required=True)
    c.add_argument("--region", required=True)
    c.add_argument("--lambda", dest="lam", default="auto")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--exit-step", type=int, default=None)
    c.add_argument("--svg")
    c.add_argument("--out", required=True)

    c = sub.add_parser("greens", help="conjugate Green's function of a white triangle")
    c.add_argument("--tgraph", required=True)
    c.add_argument("--face", required=True)
    c.add_argument("--out", required=True)

    c = sub.add_parser("shape", help="boxed plane partition fields as CSV")
    c.add_argument("--what", choices=("bpp-phi", "beltrami", "burgers"), required=True)
    c.add_argument("--grid", type=int, default=256)
    c.add_argument("--out", required=True)

    c = sub.add_parser("covariance", help="height covariance of two faces")
    c.add_argument("--region", required=True)
    c.add_argument("--f1", required=True)
    c.add_argument("--f2", required=True)
    c.add_argument("--dirs", help="lattice directions of the two paths, e.g. 3,0")
    c.add_argument("--exact", action="store_true")
    c.add_argument("--predict", choices=("flat", "bpp"))
    c.add_argument("--samples", type=int, default=0)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)

    c = sub.add_parser("moments", help="centered height moments")
    c.add_argument("--region", required=True)
    c.add_argument("--k", type=int, required=True)
    c.add_argument("--points", required=True, help="m,n;m,n;...")
    c.add_argument("--dirs")
    c.add_argument("--out", required=True)

    c = sub.add_parser("verify", help="run the acceptance suite")
    c.add_argument("--suite", choices=("quick", "full"), default="quick")
    return p


def _canonical_argv(args, resolved):
    """argv reproducing this run, with defaults and resolved values filled in."""
    out = [f"--threads={resolved['threads']}", args.command]
    skip = {"command", "threads", "manifest"}
    for key, val in sorted(vars(args).items()):
        if key in skip or val is None or val is False:
            continue
        if key == "lam" and "lambda" in resolved:
            val = ",".join(repr(x) for x in resolved["lambda"])
        if key == "exit_step" and "exit_step" in resolved:
            continue
        if key == "dirs":
            continue
        flag = "--lambda" if key == "lam" else "--" + key.replace("_", "-")
        # flag=value keeps values with a leading minus from reading as options
        out.append(flag if val is True else f"{flag}={val}")
    if "exit_step" in resolved:
        out.append(f"--exit-step={resolved['exit_step']}")
    if "dirs" in resolved:
        out.append("--dirs=" + ",".join(str(d) for d in resolved["dirs"]))
    return out


def write_manifest(args, ctx):
    if not ctx["outputs"]:
        return None
    path = ctx["outputs"][0] + ".manifest.json"
    dump_json({
        "version": __version__,
        "command": args.command,
        "argv": _canonical_argv(args, ctx["resolved"]),
        "threads": ctx["threads"],
        "outputs": ctx["outputs"],
        "resolved": ctx["resolved"],
    }, path)
    return path


def run(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.manifest:
            man = read_json(args.manifest)
            if "argv" not in man:
                raise UsageError(f"{args.manifest} is not a manifest")
            args = parser.parse_args(man["argv"])
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("a command is required")
        threads = args.threads if args.threads is not None else default_threads()
        if threads < 1:
            raise UsageError("--threads must be positive")
        ctx = {"threads": threads, "outputs": [], "resolved": {"threads": threads}}
        code = COMMANDS[args.command](args, ctx)
        write_manifest(args, ctx)
        return EXIT_OK if code is None else code
    except UsageError as exc:
        print(f"dimerlab: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValidationError as exc:
        print(f"dimerlab: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"dimerlab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DimerlabError as exc:
        print(f"dimerlab: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"dimerlab: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def main(argv=None):
    return run(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
