"""Command-line experiment runner.

Every verb reads an optional TOML config, applies command-line flags on
top, and writes its results under an output directory. Outputs are pure
functions of (config, flags, seeds): rerunning a command reproduces the
same bytes.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import json
import os
import re
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .agent import AgentConfig, BatchSpec, EpisodeTrace, TaskTemplate, run_batch, write_traces
from .metrics import SummaryTable, aggregate, lifecycle, ordering_fraction
from .oracle import ORACLE_KINDS, OracleConfig
from .policy import ALL_ARMS, PolicyArm, ResidualWeights, ScoringParams
from .world.core import validate_world
from .world.generate import WorldConfig, generate_world
from .world.perception import SensorConfig
from .world.scenario import ScenarioError, dumps_world, loads_world, save_world

ENDPOINT_ENV = "HYPNAV_ORACLE_ENDPOINT"

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2
EXIT_CHECK = 3

DEFAULT_THETAS = (0.3, 0.4, 0.5, 0.6, 0.7)
DEFAULT_EPSILONS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
ABLATION_CHECKS = (("full", "local-delete"), ("local-delete", "soft-decay"),
                   ("soft-decay", "no-cascade"))
ABLATION_MIN_FRACTION = 0.6


class ConfigError(ValueError):
    """A config file or flag that cannot be turned into a run."""


@dataclass(frozen=True)
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    task: TaskTemplate = field(default_factory=TaskTemplate)
    arms: tuple[str, ...] = ("full",)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    scoring: ScoringParams = field(default_factory=ScoringParams)
    residual: ResidualWeights = field(default_factory=ResidualWeights)
    agent: AgentConfig = field(default_factory=AgentConfig)
    seeds: tuple[int, int] = (0, 9)
    workers: int = 1
    out: str = "runs"
    dump_graph: bool = False
    verbose: bool = False
    thetas: tuple[float, ...] = DEFAULT_THETAS
    epsilons: tuple[float, ...] = DEFAULT_EPSILONS

    @property
    def seed_list(self) -> list[int]:
        return list(range(self.seeds[0], self.seeds[1] + 1))

    def batch_spec(self) -> BatchSpec:
        return BatchSpec(self.world, self.task, self.oracle, self.scoring, self.residual,
                         self.agent, self.dump_graph)

    def to_dict(self) -> dict:
        """Everything that affects results; location, workers and verbosity do not."""
        world = {f.name: getattr(self.world, f.name) for f in fields(WorldConfig) if f.name != "taxonomy"}
        agent = {f.name: getattr(self.agent, f.name) for f in fields(AgentConfig) if f.name != "sensor"}
        agent["sensor"] = dataclasses.asdict(self.agent.sensor)
        oracle = {"kind": self.oracle.kind, "entropy_gate": self.oracle.entropy_gate,
                  "endpoint": self.oracle.endpoint, "timeout_s": self.oracle.timeout_s,
                  "error_rate": self.oracle.noise.error_rate,
                  "rng_seed": self.oracle.noise.rng_seed,
                  "taxonomy_weights": dict(sorted(self.oracle.noise.taxonomy_weights.items()))}
        return {
            "seeds": f"{self.seeds[0]}..{self.seeds[1]}", "arms": list(self.arms),
            "dump_graph": self.dump_graph, "world": world, "task": dataclasses.asdict(self.task),
            "oracle": oracle, "scoring": dataclasses.asdict(self.scoring),
            "residual": dataclasses.asdict(self.residual), "agent": agent,
            "sweep": {"thetas": list(self.thetas), "epsilons": list(self.epsilons)},
        }


# -- config parsing -------------------------------------------------------

_TOP_KEYS = {"seeds", "arms", "workers", "out", "dump_graph", "verbose"}
_SECTIONS = {
    "world": {f.name for f in fields(WorldConfig)} - {"taxonomy"},
    "task": {f.name for f in fields(TaskTemplate)},
    "oracle": {"kind", "entropy_gate", "endpoint", "timeout_s", "error_rate", "rng_seed",
               "taxonomy_weights"},
    "scoring": {f.name for f in fields(ScoringParams)},
    "residual": {f.name for f in fields(ResidualWeights)},
    "agent": ({f.name for f in fields(AgentConfig)} - {"sensor"}) | {"sensor"},
    "sweep": {"thetas", "epsilons"},
}
_SUBSECTIONS = {("agent", "sensor"): {f.name for f in fields(SensorConfig)},
                ("oracle", "taxonomy_weights"): None}


def _key_line(text: str, path: Sequence[str]) -> int | None:
    """Best-effort line number where the dotted key ``path`` is written."""
    table: tuple[str, ...] = ()
    key_re = re.compile(r'^\s*("?)([A-Za-z0-9_\-]+)\1\s*=')
    head_re = re.compile(r"^\s*\[\s*([A-Za-z0-9_.\-\" ]+?)\s*\]\s*(#.*)?$")
    for i, line in enumerate(text.splitlines(), 1):
        m = head_re.match(line)
        if m:
            table = tuple(p.strip().strip('"') for p in m.group(1).split("."))
            if table == tuple(path):
                return i
            continue
        m = key_re.match(line)
        if m and table + (m.group(2),) == tuple(path):
            return i
    return None


def _where(text: str | None, source: str, path: Sequence[str]) -> str:
    line = _key_line(text, path) if text is not None else None
    loc = f"{source}:{line}" if line else source
    return f"{loc}: {'.'.join(path)}"


def _check_keys(data: dict, text: str | None, source: str) -> None:
    for key, val in data.items():
        if key in _TOP_KEYS:
            continue
        if key not in _SECTIONS:
            raise ConfigError(f"{_where(text, source, [key])}: unknown key")
        if not isinstance(val, dict):
            raise ConfigError(f"{_where(text, source, [key])}: expected a table")
        for sub, sval in val.items():
            if sub not in _SECTIONS[key]:
                raise ConfigError(f"{_where(text, source, [key, sub])}: unknown key")
            allowed = _SUBSECTIONS.get((key, sub), ...)
            if allowed is ...:
                continue
            if not isinstance(sval, dict):
                raise ConfigError(f"{_where(text, source, [key, sub])}: expected a table")
            if allowed is not None:
                for k in sval:
                    if k not in allowed:
                        raise ConfigError(f"{_where(text, source, [key, sub, k])}: unknown key")


def parse_seeds(spec: str | int | Sequence[int]) -> tuple[int, int]:
    """``"a..b"`` (inclusive), a single integer, or a two-element list."""
    if isinstance(spec, bool):
        raise ConfigError(f"bad seed range {spec!r}")
    if isinstance(spec, int):
        return (spec, spec)
    if isinstance(spec, (list, tuple)):
        if len(spec) != 2 or not all(isinstance(s, int) and not isinstance(s, bool) for s in spec):
            raise ConfigError(f"bad seed range {spec!r}; expected [a, b]")
        a, b = spec
    else:
        m = re.fullmatch(r"\s*(-?\d+)\s*(?:\.\.\s*(-?\d+)\s*)?", str(spec))
        if not m:
            raise ConfigError(f"bad seed range {spec!r}; expected a..b")
        a = int(m.group(1))
        b = int(m.group(2)) if m.group(2) is not None else a
    if b < a:
        raise ConfigError(f"empty seed range {a}..{b}")
    return (a, b)


def parse_arms(spec: str | Sequence[str]) -> tuple[str, ...]:
    items = [s.strip() for s in spec.split(",")] if isinstance(spec, str) else [str(s) for s in spec]
    items = [s for s in items if s]
    if not items:
        raise ConfigError("arm list is empty")
    out = []
    for s in items:
        try:
            name = PolicyArm.parse(s).name
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if name not in out:
            out.append(name)
    return tuple(out)


def _floats(name: str, val: Any) -> tuple[float, ...]:
    if not isinstance(val, (list, tuple)) or not val:
        raise ConfigError(f"{name} must be a non-empty list of numbers")
    try:
        return tuple(float(v) for v in val)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a non-empty list of numbers") from None


def _build(cls, values: dict, base, label: str):
    try:
        return replace(base, **values) if values else base
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{label}] {exc}") from None


def config_from_dict(data: dict, text: str | None = None, source: str = "<config>",
                     env: dict | None = None) -> RunConfig:
    """Validate a parsed config; every section and key is optional."""
    _check_keys(data, text, source)
    env = os.environ if env is None else env
    base = RunConfig()
    world = _build(WorldConfig, dict(data.get("world", {})), base.world, "world")
    task = _build(TaskTemplate, dict(data.get("task", {})), base.task, "task")
    scoring = _build(ScoringParams, dict(data.get("scoring", {})), base.scoring, "scoring")
    residual = _build(ResidualWeights, dict(data.get("residual", {})), base.residual, "residual")
    agent_d = dict(data.get("agent", {}))
    sensor = _build(SensorConfig, dict(agent_d.pop("sensor", {})), base.agent.sensor, "agent.sensor")
    agent = _build(AgentConfig, {**agent_d, "sensor": sensor}, base.agent, "agent")
    oracle = oracle_from_dict(dict(data.get("oracle", {})), env)
    sweep = data.get("sweep", {})
    kw: dict[str, Any] = {"world": world, "task": task, "scoring": scoring, "residual": residual,
                          "agent": agent, "oracle": oracle}
    if "seeds" in data:
        kw["seeds"] = parse_seeds(data["seeds"])
    if "arms" in data:
        kw["arms"] = parse_arms(data["arms"])
    if "workers" in data:
        kw["workers"] = _workers(data["workers"])
    if "out" in data:
        kw["out"] = str(data["out"])
    for flag in ("dump_graph", "verbose"):
        if flag in data:
            if not isinstance(data[flag], bool):
                raise ConfigError(f"{flag} must be true or false")
            kw[flag] = data[flag]
    if "thetas" in sweep:
        kw["thetas"] = _floats("sweep.thetas", sweep["thetas"])
    if "epsilons" in sweep:
        kw["epsilons"] = _floats("sweep.epsilons", sweep["epsilons"])
    return replace(base, **kw)


def oracle_from_dict(d: dict, env: dict | None = None) -> OracleConfig:
    env = os.environ if env is None else env
    base = OracleConfig()
    noise_kw = {k: d.pop(k) for k in ("error_rate", "rng_seed", "taxonomy_weights") if k in d}
    try:
        noise = replace(base.noise, **noise_kw) if noise_kw else base.noise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[oracle] {exc}") from None
    if d.get("endpoint") is None and env.get(ENDPOINT_ENV):
        d["endpoint"] = env[ENDPOINT_ENV]
    if "kind" in d and d["kind"] not in ORACLE_KINDS:
        raise ConfigError(f"[oracle] unknown oracle {d['kind']!r}; expected one of {ORACLE_KINDS}")
    return _build(OracleConfig, {**d, "noise": noise}, base, "oracle")


def load_config(path: str | Path | None, env: dict | None = None) -> RunConfig:
    if path is None:
        return config_from_dict({}, env=env)
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror or exc}") from None
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: {exc}") from None
    return config_from_dict(data, text, str(p), env)


def _workers(v: Any) -> int:
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        raise ConfigError(f"workers must be a positive integer, got {v!r}")
    return v


def apply_flags(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    """Command-line flags override the config file."""
    kw: dict[str, Any] = {}
    if getattr(args, "seeds", None) is not None:
        kw["seeds"] = parse_seeds(args.seeds)
    if getattr(args, "arms", None) is not None:
        kw["arms"] = parse_arms(args.arms)
    if getattr(args, "workers", None) is not None:
        kw["workers"] = _workers(args.workers)
    if getattr(args, "out", None) is not None:
        kw["out"] = args.out
    if getattr(args, "dump_graph", False):
        kw["dump_graph"] = True
    if getattr(args, "verbose", False):
        kw["verbose"] = True
    if getattr(args, "thetas", None) is not None:
        kw["thetas"] = _floats("--thetas", _split_floats(args.thetas))
    if getattr(args, "epsilons", None) is not None:
        kw["epsilons"] = _floats("--epsilons", _split_floats(args.epsilons))
    return replace(cfg, **kw) if kw else cfg


def _split_floats(s: str) -> list[float]:
    try:
        return [float(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad number list {s!r}") from None


# -- output ---------------------------------------------------------------


def output_dir(base: str | Path, verb: str, overwrite: bool, now: _dt.datetime | None = None) -> Path:
    """``base`` itself with ``--overwrite``; otherwise a fresh timestamped child."""
    base = Path(base)
    if overwrite:
        target = base
    else:
        stamp = (now or _dt.datetime.now()).strftime("%Y%m%dT%H%M%S")
        target = base / f"{verb}-{stamp}"
        n = 1
        while target.exists():
            target = base / f"{verb}-{stamp}-{n}"
            n += 1
    target.mkdir(parents=True, exist_ok=True)
    return target


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="\n")


def _write_common(out: Path, cfg: RunConfig, traces: list[EpisodeTrace]) -> SummaryTable:
    _write(out / "config.json", json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
    write_traces(traces, out / "traces.jsonl")
    table = aggregate(traces)
    _write(out / "summary.csv", table.to_csv())
    if cfg.dump_graph:
        _write_graphs(out, traces)
    return table


def _write_graphs(out: Path, traces: list[EpisodeTrace]) -> None:
    gdir = out / "graphs"
    gdir.mkdir(exist_ok=True)
    for t in traces:
        if t.graph_snapshot is not None:
            _write(gdir / f"seed{t.seed}-{t.arm}.json",
                   json.dumps(t.graph_snapshot, indent=1, sort_keys=True) + "\n")


def _log(cfg: RunConfig, msg: str) -> None:
    if cfg.verbose:
        print(msg, file=sys.stderr)


def _batch(cfg: RunConfig, arms: Sequence[str] | None = None) -> list[EpisodeTrace]:
    arms = tuple(arms or cfg.arms)
    _log(cfg, f"running {len(cfg.seed_list)} seeds x {len(arms)} arms on {cfg.workers} workers")
    traces = run_batch(cfg.seed_list, arms, cfg.batch_spec(), workers=cfg.workers)
    for t in traces:
        if t.error:
            _log(cfg, f"seed {t.seed} arm {t.arm}: {t.error}")
    return traces


def _refutation_rate(traces: list[EpisodeTrace]) -> float:
    life = lifecycle(traces)
    verified = life.confirmed + life.refuted
    return life.refuted / verified if verified else 0.0


# -- verbs ----------------------------------------------------------------


def cmd_run(cfg: RunConfig, overwrite: bool = False) -> int:
    traces = _batch(cfg)
    out = output_dir(cfg.out, "run", overwrite)
    _write_common(out, cfg, traces)
    print(out)
    return EXIT_OK


def cmd_ablate(cfg: RunConfig, overwrite: bool = False) -> int:
    """All six arms on matched seeds, the table, paired tests and ordering checks."""
    arms = tuple(a.value for a in ALL_ARMS)
    cfg = replace(cfg, arms=arms)
    traces = _batch(cfg)
    out = output_dir(cfg.out, "ablate", overwrite)
    table = _write_common(out, cfg, traces)
    _write(out / "paired.csv", table.paired_csv())
    lines = ["better,worse,fraction,required,status"]
    flagged = []
    for better, worse in ABLATION_CHECKS:
        frac = ordering_fraction(traces, better, worse)
        ok = frac >= ABLATION_MIN_FRACTION
        lines.append(f"{better},{worse},{frac:.6f},{ABLATION_MIN_FRACTION:.2f},"
                     f"{'ok' if ok else 'VIOLATED'}")
        if not ok:
            flagged.append(f"{better} >= {worse} in {frac:.1%} of seeds")
    _write(out / "ordering.csv", "\n".join(lines) + "\n")
    for msg in flagged:
        print(f"ordering violated: {msg}", file=sys.stderr)
    print(out)
    return EXIT_OK


def cmd_sweep_theta(cfg: RunConfig, overwrite: bool = False) -> int:
    """Refutation rate, SR and SPL of the first arm across refutation thresholds."""
    arm = cfg.arms[0]
    rows = ["theta,refutation_rate,sr,spl"]
    rates = []
    for theta in cfg.thetas:
        try:
            w = replace(cfg.residual, theta_refute=theta)
        except ValueError as exc:
            raise ConfigError(f"theta {theta}: {exc}") from None
        traces = _batch(replace(cfg, residual=w), [arm])
        row = aggregate(traces).row(arm)
        rate = _refutation_rate(traces)
        rates.append(rate)
        rows.append(f"{theta:.6f},{rate:.6f},{row.sr:.6f},{row.spl:.6f}")
    out = output_dir(cfg.out, "sweep-theta", overwrite)
    _write(out / "config.json", json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
    _write(out / "sweep_theta.csv", "\n".join(rows) + "\n")
    print(out)
    order = sorted(range(len(rates)), key=lambda i: cfg.thetas[i])
    for a, b in zip(order, order[1:]):
        if rates[b] > rates[a] + 1e-12:
            print(f"refutation rate rises from {rates[a]:.4f} at theta {cfg.thetas[a]} "
                  f"to {rates[b]:.4f} at theta {cfg.thetas[b]}", file=sys.stderr)
            return EXIT_CHECK
    return EXIT_OK


def cmd_sweep_noise(cfg: RunConfig, overwrite: bool = False) -> int:
    """Per-arm SR, SPL, revisit and refutation rates across oracle error rates."""
    rows = ["error_rate,arm,sr,spl,revisit_rate,refutation_rate"]
    for eps in cfg.epsilons:
        try:
            noise = replace(cfg.oracle.noise, error_rate=eps)
        except ValueError as exc:
            raise ConfigError(f"error rate {eps}: {exc}") from None
        traces = _batch(replace(cfg, oracle=replace(cfg.oracle, noise=noise)))
        table = aggregate(traces)
        for arm in cfg.arms:
            r = table.row(arm)
            rate = _refutation_rate([t for t in traces if t.arm == arm])
            rows.append(f"{eps:.6f},{arm},{r.sr:.6f},{r.spl:.6f},{r.revisit_rate:.6f},{rate:.6f}")
    out = output_dir(cfg.out, "sweep-noise", overwrite)
    _write(out / "config.json", json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
    _write(out / "sweep_noise.csv", "\n".join(rows) + "\n")
    print(out)
    return EXIT_OK


def cmd_dump_graph(cfg: RunConfig, overwrite: bool = False) -> int:
    """Final hypothesis graph of every episode as JSON, without traces."""
    cfg = replace(cfg, dump_graph=True)
    traces = _batch(cfg)
    out = output_dir(cfg.out, "dump-graph", overwrite)
    _write_graphs(out, traces)
    print(out)
    return EXIT_OK


def cmd_scenario(action: str, path: str, cfg: RunConfig, seed: int | None = None) -> int:
    """Validate, round-trip or generate a scenario file."""
    p = Path(path)
    if action == "generate":
        world = generate_world(cfg.world, cfg.seeds[0] if seed is None else seed)
        p.parent.mkdir(parents=True, exist_ok=True)
        save_world(world, p)
        print(p)
        return EXIT_OK
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        print(f"cannot read {p}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    try:
        world = loads_world(text)
    except ScenarioError as exc:
        print(f"{p}: {exc}", file=sys.stderr)
        return EXIT_CHECK
    if action == "validate":
        problems = validate_world(world)
        for msg in problems:
            print(f"{p}: {msg}")
        if problems:
            return EXIT_CHECK
        print(f"{p}: ok")
        return EXIT_OK
    again = dumps_world(world)
    if again != text:
        print(f"{p}: load and save do not reproduce the file", file=sys.stderr)
        return EXIT_CHECK
    if dumps_world(loads_world(again)) != again:
        print(f"{p}: second round trip differs", file=sys.stderr)
        return EXIT_CHECK
    print(f"{p}: round trip ok")
    return EXIT_OK


# -- entry point ----------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--seeds", help="inclusive seed range a..b")
    p.add_argument("--arms", help="comma-separated arm names")
    p.add_argument("--workers", type=int, help="worker processes")
    p.add_argument("--out", help="output directory")
    p.add_argument("--overwrite", action="store_true", help="write into --out itself")
    p.add_argument("--dump-graph", action="store_true", help="also write final graph snapshots")
    p.add_argument("--verbose", action="store_true", help="progress on stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hypnav", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, help_ in (("run", "run the configured arms"),
                        ("ablate", "run all six arms and compare them"),
                        ("sweep-theta", "sweep the refutation threshold"),
                        ("sweep-noise", "sweep the oracle error rate"),
                        ("dump-graph", "write final graph snapshots")):
        p = sub.add_parser(verb, help=help_)
        _common(p)
        if verb == "sweep-theta":
            p.add_argument("--thetas", help="comma-separated thresholds")
        if verb == "sweep-noise":
            p.add_argument("--epsilons", help="comma-separated error rates")
    p = sub.add_parser("scenario", help="validate, round-trip or generate a scenario file")
    p.add_argument("action", choices=("validate", "roundtrip", "generate"))
    p.add_argument("path")
    p.add_argument("--config", help="TOML config file (world section used by generate)")
    p.add_argument("--seed", type=int, help="world seed for generate")
    return parser


_VERBS = {"run": cmd_run, "ablate": cmd_ablate, "sweep-theta": cmd_sweep_theta,
          "sweep-noise": cmd_sweep_noise, "dump-graph": cmd_dump_graph}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = apply_flags(load_config(args.config), args)
        if args.verb == "scenario":
            return cmd_scenario(args.action, args.path, cfg, args.seed)
        return _VERBS[args.verb](cfg, overwrite=args.overwrite)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())


__all__ = [
    "ConfigError", "ENDPOINT_ENV", "RunConfig", "apply_flags", "build_parser", "cmd_ablate",
    "cmd_dump_graph", "cmd_run", "cmd_scenario", "cmd_sweep_noise", "cmd_sweep_theta",
    "config_from_dict", "load_config", "main", "output_dir", "parse_arms", "parse_seeds",
]
