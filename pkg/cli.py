"""
CLI: Equivalence Checks from the Command Line

    python cli.py check slocc ghz.state psi.state
    python cli.py check lu-mixed rho.state rhoprime.state --params a=3,b=5,c=7
    python cli.py unfold ghz.state --mode 1
    python cli.py cp ghz.state --rank 2
    python cli.py factorize p.matrix --dims 2,2,2
    python cli.py examples ghz --out fixtures/
    python cli.py gen-pair --dims 2,2,2 --mode lu --seed 4 --out pair/

Exit codes: 0 equivalent (or necessary test passed), 2 not equivalent,
3 inconclusive, 1 usage or file error.

State files are JSON text:

    {
      "format_version": 1,
      "kind": "pure",
      "dims": [2, 2, 2],
      "data": [[re, im], ...]
    }

Pure data lists the amplitudes in ket order (party 1 most significant).
Mixed data lists the density matrix entries row by row, either flat or as
nested rows. kind "tensor" holds a raw coefficient tensor whose entries run
first index fastest; kind "matrix" holds a square matrix for ``factorize``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, TextIO

import numpy as np

from cp import AlsOptions, als_fit, reconstruct
from equivalence import (
    SearchOptions,
    Verdict,
    WITNESS_TOL,
    generate_equivalent_pair,
    mixed_lu_check,
    mixed_slocc_necessary,
    pure_lu_check,
    pure_slocc_check,
)
from kron_factor import KronFactorizationError, factorize_multiparty, unitarize_factors
from linalg_products import RANK_TOL, eig_hermitian, kron_all
from state_codec import (
    FORMAT_VERSION,
    QuantumState,
    density_to_tensor,
    example_mixed_pair,
    example_psi_state,
    ghz_state,
    pure_to_tensor,
)
from tensor_core import DomainError, NumericError, Tensor, check_dims, unfold

logger = logging.getLogger(__name__)

SEED_ENV = "QE_SEED"
EXIT_USAGE = 1


class UsageError(Exception):
    """Bad arguments or a malformed input file; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def _line_of(text: str, key: str) -> int:
    """1-based line of the first occurrence of a JSON key, 1 if absent."""
    needle = f'"{key}"'
    for number, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return number
    return 1


def _read_json(path: Path):
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror or exc}") from exc
    try:
        return text, json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}: {exc.msg}") from exc


def _complex_array(values, where: str) -> np.ndarray:
    try:
        pairs = np.asarray(values, dtype=float)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{where}: data must be numeric [re, im] pairs") from exc
    if pairs.ndim < 1 or pairs.shape[-1] != 2:
        raise UsageError(f"{where}: data entries must be [re, im] pairs")
    return pairs[..., 0] + 1j * pairs[..., 1]


def _pairs(values: np.ndarray) -> List[List[float]]:
    return [[float(z.real), float(z.imag)] for z in np.asarray(values).ravel()]


def load_state(path) -> QuantumState:
    """
    Read a pure or mixed state file.

    Raises:
        UsageError: with ``file:line:`` prefix on malformed JSON, missing
            fields, or data that is not a valid state
    """
    path = Path(path)
    text, doc = _read_json(path)
    if not isinstance(doc, dict):
        raise UsageError(f"{path}:1: state file must hold a JSON object")
    for key in ("kind", "dims", "data"):
        if key not in doc:
            raise UsageError(f"{path}:1: missing field {key!r}")
    version = doc.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise UsageError(f"{path}:{_line_of(text, 'format_version')}: "
                         f"unsupported format_version {version}")

    kind = doc["kind"]
    try:
        dims = check_dims(doc["dims"])
    except (DomainError, TypeError, ValueError) as exc:
        raise UsageError(f"{path}:{_line_of(text, 'dims')}: {exc}") from exc
    where = f"{path}:{_line_of(text, 'data')}"
    data = _complex_array(doc["data"], where)
    try:
        if kind == "pure":
            return QuantumState.pure(data.ravel(), dims)
        if kind == "mixed":
            total = int(np.prod(dims))
            if data.size != total * total:
                raise UsageError(f"{where}: expected {total * total} entries, got {data.size}")
            return QuantumState.mixed(data.reshape(total, total), dims)
    except DomainError as exc:
        raise UsageError(f"{where}: {exc}") from exc
    raise UsageError(f"{path}:{_line_of(text, 'kind')}: unknown kind {kind!r}")


def load_tensor(path) -> Tensor:
    """Coefficient tensor of a state file, or the raw tensor of a kind "tensor" file."""
    path = Path(path)
    text, doc = _read_json(path)
    if isinstance(doc, dict) and doc.get("kind") == "tensor":
        where = f"{path}:{_line_of(text, 'data')}"
        try:
            return Tensor.from_entries(_complex_array(doc["data"], where), doc["dims"])
        except (DomainError, KeyError, TypeError) as exc:
            raise UsageError(f"{where}: {exc}") from exc
    state = load_state(path)
    return pure_to_tensor(state) if state.kind == "pure" else density_to_tensor(state)


def load_matrix(path) -> np.ndarray:
    """Square matrix from a kind "matrix" file (rows of [re, im]) or a bare nested list."""
    path = Path(path)
    text, doc = _read_json(path)
    values = doc.get("data") if isinstance(doc, dict) else doc
    where = f"{path}:{_line_of(text, 'data') if isinstance(doc, dict) else 1}"
    if values is None:
        raise UsageError(f"{where}: missing field 'data'")
    M = _complex_array(values, where)
    if M.ndim == 1:
        side = int(round(np.sqrt(M.size)))
        if side * side != M.size:
            raise UsageError(f"{where}: {M.size} entries do not form a square matrix")
        M = M.reshape(side, side)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise UsageError(f"{where}: matrix must be square, got shape {M.shape}")
    return M


def _write_document(path: Path, header: Dict, rows: List) -> None:
    """One field per line and one entry per data line, so files diff cleanly."""
    lines = ["{"]
    for key, value in header.items():
        lines.append(f"  {json.dumps(key)}: {json.dumps(value)},")
    lines.append('  "data": [')
    lines.append(",\n".join(f"    {json.dumps(row)}" for row in rows))
    lines.append("  ]")
    lines.append("}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def dump_state(state: QuantumState, path) -> Path:
    path = Path(path)
    header = {"format_version": FORMAT_VERSION, "kind": state.kind, "dims": list(state.dims)}
    _write_document(path, header, _pairs(state.data))
    return path


def dump_matrix(M: np.ndarray, path) -> Path:
    path = Path(path)
    rows = [_pairs(row) for row in np.asarray(M)]
    _write_document(path, {"format_version": FORMAT_VERSION, "kind": "matrix"}, rows)
    return path


# ---------------------------------------------------------------------------
# Argument helpers
# ---------------------------------------------------------------------------

def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _params(text: str) -> Dict[str, float]:
    out = {}
    for item in text.split(","):
        if not item.strip():
            continue
        key, sep, value = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"expected name=value, got {item!r}")
        try:
            out[key.strip()] = float(value)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"{key.strip()} is not a number: {value!r}") from exc
    return out


def resolve_seed(flag: Optional[int], environ=os.environ) -> int:
    """--seed wins, then QE_SEED, then 0."""
    if flag is not None:
        return flag
    raw = environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return 0
    try:
        return int(raw)
    except ValueError as exc:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from exc


def _format_entry(z: complex) -> str:
    if abs(z.imag) < 1e-15:
        return f"{z.real:.6g}"
    return f"{z.real:.6g}{z.imag:+.6g}j"


def _matrix_lines(M: np.ndarray, indent: str = "    ") -> List[str]:
    M = np.asarray(M, dtype=np.complex128)
    cells = [[_format_entry(z) for z in row] for row in M]
    width = max((len(c) for row in cells for c in row), default=1)
    return [indent + "[" + "  ".join(c.rjust(width) for c in row) + "]" for row in cells]


def _banner(title: str, out: TextIO) -> None:
    print("=" * 70, file=out)
    print(f"  {title}", file=out)
    print("=" * 70, file=out)


def _emit_json(doc: Dict, out: TextIO) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True), file=out)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

CHECKS = {
    "slocc": ("pure", pure_slocc_check),
    "lu": ("pure", pure_lu_check),
    "slocc-mixed": ("mixed", mixed_slocc_necessary),
    "lu-mixed": ("mixed", mixed_lu_check),
}


def _fixture_spectrum(params: Dict[str, float]) -> np.ndarray:
    a, b, c = params.get("a", 3.0), params.get("b", 5.0), params.get("c", 7.0)
    K = 2 + a + b + c + 1 / a + 1 / b + 1 / c
    return np.sort(np.array([0, 1 / c, 1 / b, 1 / a, 2, a, b, c]) / K)


def cmd_check(args, out: TextIO) -> int:
    kind, checker = CHECKS[args.relation]
    first, second = load_state(args.first), load_state(args.second)
    if first.kind != kind or second.kind != kind:
        raise UsageError(f"check {args.relation} needs two {kind} state files")
    seed = resolve_seed(args.seed)
    options = SearchOptions(tol=args.tol, seed=seed, restarts=args.restarts)
    verdict: Verdict = checker(first, second, options)

    if args.params is not None:
        if first.dims != (2, 2, 2):
            raise UsageError("--params describes the three-qubit mixed fixtures")
        expected = _fixture_spectrum(args.params)
        observed = eig_hermitian(first.density_matrix())[0]
        verdict.diagnostics["params"] = args.params
        verdict.diagnostics["fixture_spectrum_error"] = float(np.max(np.abs(expected - observed)))

    if args.json:
        doc = verdict.to_dict()
        doc.update({"seed": seed, "tol": args.tol, "exit_code": verdict.exit_code,
                    "inputs": [str(args.first), str(args.second)]})
        _emit_json(doc, out)
    else:
        _banner(f"CHECK {args.relation.upper()}: {args.first} vs {args.second}", out)
        for line in verdict.summary():
            print("  " + line, file=out)
        print(f"  seed {seed}, tol {args.tol:g}", file=out)
    return verdict.exit_code


def cmd_unfold(args, out: TextIO) -> int:
    t = load_tensor(args.file)
    matrix = unfold(t, args.mode)
    if args.json:
        _emit_json({"mode": args.mode, "dims": list(t.dims), "shape": list(matrix.shape),
                    "matrix": [_pairs(row) for row in matrix]}, out)
        return 0
    _banner(f"UNFOLD {args.file}: mode {args.mode} of dims {list(t.dims)}", out)
    print(f"  X_({args.mode}) is {matrix.shape[0]} x {matrix.shape[1]}", file=out)
    for line in _matrix_lines(matrix):
        print(line, file=out)
    return 0


def cmd_cp(args, out: TextIO) -> int:
    t = load_tensor(args.file)
    seed = resolve_seed(args.seed)
    f = als_fit(t, args.rank, AlsOptions(restarts=args.restarts, seed=seed))
    residual = float(np.linalg.norm((t - reconstruct(f)).data))
    if args.json:
        _emit_json({"rank": f.rank, "fit": f.fit, "residual": residual, "restart": f.restart,
                    "sweeps": len(f.fit_history), "seed": seed,
                    "factors": [[_pairs(row) for row in A] for A in f.factors]}, out)
        return 0
    _banner(f"CP {args.file}: rank {args.rank}", out)
    print(f"  fit        1 - {1 - f.fit:.3e}", file=out)
    print(f"  residual   {residual:.3e}", file=out)
    print(f"  restart    {f.restart} of {args.restarts}, {len(f.fit_history)} sweeps", file=out)
    for n, A in enumerate(f.factors, start=1):
        print(f"\n  A_{n} =", file=out)
        for line in _matrix_lines(A):
            print(line, file=out)
    return 0


def cmd_factorize(args, out: TextIO) -> int:
    M = load_matrix(args.file)
    try:
        result = factorize_multiparty(M, args.dims, args.tol)
    except KronFactorizationError as exc:
        if args.json:
            _emit_json({"kronecker": False, "party": exc.party, "gap": exc.gap,
                        "message": str(exc)}, out)
        else:
            _banner(f"FACTORIZE {args.file}: not a tensor product", out)
            print(f"  {exc}", file=out)
        return 2

    try:
        unitaries = unitarize_factors(result, args.tol)
    except DomainError:
        unitaries = None
    factors = unitaries if unitaries is not None else result.factors
    if args.json:
        _emit_json({"kronecker": True, "unitary": unitaries is not None,
                    "residual": result.residual, "rank_gaps": result.rank_gaps,
                    "invertible": result.invertible,
                    "factors": [[_pairs(row) for row in m] for m in factors]}, out)
        return 0
    _banner(f"FACTORIZE {args.file}: dims {list(args.dims)}", out)
    print(f"  residual   {result.residual:.3e}", file=out)
    print(f"  rank gaps  {', '.join(f'{g:.2e}' for g in result.rank_gaps)}", file=out)
    if not result.invertible:
        print("  note: some factor is singular", file=out)
    label = "U" if unitaries is not None else "m"
    for i, m in enumerate(factors, start=1):
        print(f"\n  {label}_{i} =", file=out)
        for line in _matrix_lines(m):
            print(line, file=out)
    return 0


def cmd_examples(args, out: TextIO) -> int:
    directory = Path(args.out)
    directory.mkdir(parents=True, exist_ok=True)
    if args.which == "ghz":
        if args.params:
            raise UsageError("examples ghz takes no --params")
        written = [dump_state(ghz_state(), directory / "ghz.state"),
                   dump_state(example_psi_state(), directory / "psi.state")]
    else:
        params = args.params or {}
        unknown = set(params) - {"a", "b", "c"}
        if unknown:
            raise UsageError(f"unknown parameters {sorted(unknown)}; expected a, b, c")
        rho, rho_prime = example_mixed_pair(params.get("a", 3.0), params.get("b", 5.0),
                                            params.get("c", 7.0))
        written = [dump_state(rho, directory / "rho.state"),
                   dump_state(rho_prime, directory / "rhoprime.state")]
    for path in written:
        print(f"  wrote {path}", file=out)
    return 0


def cmd_gen_pair(args, out: TextIO) -> int:
    seed = resolve_seed(args.seed)
    first, second, witness = generate_equivalent_pair(args.dims, args.mode, seed, args.kind)
    directory = Path(args.out)
    directory.mkdir(parents=True, exist_ok=True)
    written = [dump_state(first, directory / "a.state"), dump_state(second, directory / "b.state")]
    for i, m in enumerate(witness.matrices, start=1):
        written.append(dump_matrix(m, directory / f"M_{i}.matrix"))
    written.append(dump_matrix(kron_all(witness.matrices), directory / "K.matrix"))
    for path in written:
        print(f"  wrote {path}", file=out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cli.py", description="SLOCC and LU equivalence of multipartite states")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    check = sub.add_parser("check", help="decide equivalence of two state files")
    check.add_argument("relation", choices=sorted(CHECKS))
    check.add_argument("first", type=Path)
    check.add_argument("second", type=Path)
    check.add_argument("--tol", type=float, default=WITNESS_TOL)
    check.add_argument("--seed", type=int, default=None)
    check.add_argument("--restarts", type=int, default=32)
    check.add_argument("--params", type=_params, default=None,
                       help="fixture parameters a=..,b=..,c=.. checked against the spectrum")
    check.add_argument("--json", action="store_true")
    check.set_defaults(handler=cmd_check)

    unf = sub.add_parser("unfold", help="print a mode-n unfolding")
    unf.add_argument("file", type=Path)
    unf.add_argument("--mode", type=int, required=True)
    unf.add_argument("--json", action="store_true")
    unf.set_defaults(handler=cmd_unfold)

    cp = sub.add_parser("cp", help="fit a rank-R CP model")
    cp.add_argument("file", type=Path)
    cp.add_argument("--rank", type=int, required=True)
    cp.add_argument("--restarts", type=int, default=16)
    cp.add_argument("--seed", type=int, default=None)
    cp.add_argument("--json", action="store_true")
    cp.set_defaults(handler=cmd_cp)

    fac = sub.add_parser("factorize", help="split a matrix into local factors")
    fac.add_argument("file", type=Path)
    fac.add_argument("--dims", type=_int_list, required=True)
    fac.add_argument("--tol", type=float, default=RANK_TOL)
    fac.add_argument("--json", action="store_true")
    fac.set_defaults(handler=cmd_factorize)

    ex = sub.add_parser("examples", help="write the worked-example state files")
    ex.add_argument("which", choices=["ghz", "mixed"])
    ex.add_argument("--out", default=".")
    ex.add_argument("--params", type=_params, default=None)
    ex.set_defaults(handler=cmd_examples)

    gen = sub.add_parser("gen-pair", help="write a seeded equivalent pair and its witness")
    gen.add_argument("--dims", type=_int_list, required=True)
    gen.add_argument("--mode", choices=["slocc", "lu"], required=True)
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--kind", choices=["pure", "mixed"], default="pure")
    gen.add_argument("--out", default=".")
    gen.set_defaults(handler=cmd_gen_pair)
    return parser


def run(argv: Optional[Sequence[str]] = None, out: Optional[TextIO] = None) -> int:
    """Parse argv, run one subcommand, and return its exit code."""
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args, out)
    except (UsageError, DomainError, NumericError, OSError) as exc:
        logger.debug("%s failed", args.command, exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
