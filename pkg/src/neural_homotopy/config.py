"""Line-based ``key = value`` run configuration.

Keys are dotted (``pde.alpha = 0.05``); ``#`` starts a comment. See README for the
full key reference. Relative paths resolve against the config file's directory.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, InvalidInputError
from .field import load_checkpoint
from .geometry import ANALYTIC_SHAPES, CloudFit, load_point_cloud
from .pde import (
    Condition,
    ConstantField,
    Interpolation,
    LevelSet,
    LossWeights,
    MeanCurvature,
    PdeProblem,
    SourceSinkField,
    TwistField,
)

DEFAULTS = {
    "experiment": "run",
    "seed": "0",
    "workers": "1",
    "net.widths": "64,64",
    "net.omega0": "30",
    "net.init": "standard",
    "pde.interval": "0,1",
    "loss.pde": "1",
    "loss.dirichlet": "100",
    "loss.eikonal": "50",
    "loss.neumann": "50",
    "loss.mode": "l1",
    "sampling.total": "2000",
    "sampling.split": "0.5,0.25,0.25",
    "sampling.cloud_size": "20000",
    "train.epochs": "1000",
    "train.lr": "1e-4",
    "train.beta1": "0.9",
    "train.beta2": "0.999",
    "train.eps": "1e-8",
    "train.checkpoint_every": "0",
    "fit.epochs": "2000",
    "fit.total": "2000",
    "eval.n": "1000",
    "eval.seed": "1000003",
    "eval.oracle": "none",
    "eval.resolution": "64",
}

PATH_KEYS_SUFFIX = (".cloud", ".checkpoint", "net.condition", "output.dir")

SHAPE_KEYS = {
    "sphere": {"center": "vec", "radius": "float"},
    "box": {"center": "vec", "half_extents": "vec"},
    "capsule": {"a": "vec", "b": "vec", "radius": "float"},
    "torus": {"center": "vec", "major": "float", "minor": "float"},
    "dumbbell": {"sphere_radius": "float", "offset": "float", "neck_radius": "float"},
}


def parse_lines(text: str) -> tuple[dict, dict]:
    """Parse config text into (values, line numbers)."""
    values, lines = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", line=lineno)
        if key in values:
            raise ConfigError("duplicate key", key=key, line=lineno)
        values[key] = value
        lines[key] = lineno
    return values, lines


@dataclass
class RunConfig:
    values: dict
    lines: dict = field(default_factory=dict)
    base: Path = Path(".")

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        values, lines = parse_lines(path.read_text(encoding="utf-8"))
        cfg = cls({**DEFAULTS, **values}, lines, path.parent.resolve())
        cfg._resolve_paths()
        cfg.validate()
        return cfg

    @classmethod
    def from_text(cls, text: str, base=".") -> "RunConfig":
        values, lines = parse_lines(text)
        cfg = cls({**DEFAULTS, **values}, lines, Path(base).resolve())
        cfg._resolve_paths()
        cfg.validate()
        return cfg

    def _resolve_paths(self):
        for k, v in list(self.values.items()):
            if k.endswith(PATH_KEYS_SUFFIX) and v:
                p = Path(v)
                self.values[k] = str(p if p.is_absolute() else (self.base / p).resolve())

    # --- typed accessors ---

    def _err(self, msg, key):
        return ConfigError(msg, key=key, line=self.lines.get(key))

    def has(self, key) -> bool:
        return key in self.values

    def get(self, key, default=None):
        if key not in self.values:
            if default is None:
                raise self._err("missing required key", key)
            return default
        return self.values[key]

    def get_float(self, key, default=None) -> float:
        s = self.get(key, None if default is None else repr(default))
        try:
            return float(s)
        except ValueError:
            raise self._err(f"expected a number, got {s!r}", key) from None

    def get_int(self, key, default=None) -> int:
        s = self.get(key, None if default is None else str(default))
        try:
            return int(s)
        except ValueError:
            raise self._err(f"expected an integer, got {s!r}", key) from None

    def get_floats(self, key, n=None, default=None) -> tuple:
        s = self.get(key, default)
        try:
            out = tuple(float(x) for x in s.split(","))
        except ValueError:
            raise self._err(f"expected comma-separated numbers, got {s!r}", key) from None
        if n is not None and len(out) != n:
            raise self._err(f"expected {n} numbers, got {len(out)}", key)
        return out

    def get_path(self, key, must_exist=True) -> Path:
        p = Path(self.get(key))
        if must_exist and not p.exists():
            raise self._err(f"referenced file does not exist: {p}", key)
        return p

    # --- builders ---

    def shape(self, prefix: str):
        kind = self.get(f"{prefix}.shape")
        if kind in ANALYTIC_SHAPES:
            kwargs = {}
            for name, typ in SHAPE_KEYS[kind].items():
                key = f"{prefix}.{name}"
                if key in self.values:
                    kwargs[name] = self.get_floats(key, 3) if typ == "vec" else self.get_float(key)
            try:
                return ANALYTIC_SHAPES[kind](**kwargs)
            except (TypeError, InvalidInputError) as exc:
                raise self._err(str(exc), f"{prefix}.shape") from None
        if kind == "cloud":
            cloud = load_point_cloud(self.get_path(f"{prefix}.cloud"))
            net = load_checkpoint(self.get_path(f"{prefix}.checkpoint"))
            return CloudFit(cloud, net)
        if kind == "checkpoint":
            net = load_checkpoint(self.get_path(f"{prefix}.checkpoint"))
            return CloudFit(None, net)
        raise self._err(f"unknown shape {kind!r}", f"{prefix}.shape")

    def condition_indices(self) -> list[int]:
        idx = set()
        for k in self.values:
            parts = k.split(".")
            if parts[0] == "condition" and len(parts) >= 3:
                try:
                    idx.add(int(parts[1]))
                except ValueError:
                    raise self._err("condition index must be an integer", k) from None
        return sorted(idx)

    def vector_field(self):
        kind = self.get("pde.field", "zero")
        if kind == "zero":
            return ConstantField((0.0, 0.0, 0.0))
        if kind == "constant":
            return ConstantField(self.get_floats("pde.field.v", 3))
        if kind == "twist":
            return TwistField()
        if kind == "source_sink":
            s = self.get("pde.field.centers")
            try:
                centers = tuple(tuple(float(x) for x in c.split(",")) for c in s.split(";"))
            except ValueError:
                raise self._err("centers must be 'x,y,z;x,y,z'", "pde.field.centers") from None
            signs = self.get_floats("pde.field.signs", default="1,-1")
            return SourceSinkField(centers, signs, self.get_float("pde.field.sigma2", 0.18))
        raise self._err(f"unknown vector field {kind!r}", "pde.field")

    def problem(self) -> PdeProblem:
        kind = self.get("pde.kind")
        if kind == "level_set":
            pk = LevelSet(self.vector_field())
        elif kind == "mean_curvature":
            pk = MeanCurvature(self.get_float("pde.alpha"))
        elif kind == "interpolation":
            pk = Interpolation(self.shape("pde.target"))
        else:
            raise self._err(f"unknown PDE kind {kind!r}", "pde.kind")
        conds = []
        for i in self.condition_indices():
            conds.append(Condition(self.get_float(f"condition.{i}.time", 0.0), self.shape(f"condition.{i}")))
        if kind == "interpolation" and self.has("pde.target_time"):
            conds.append(Condition(self.get_float("pde.target_time"), pk.target))
        if not conds:
            raise self._err("at least one condition.N.* block is required", "condition.0.shape")
        try:
            return PdeProblem(pk, self.get_floats("pde.interval", 2), tuple(conds))
        except InvalidInputError as exc:
            raise self._err(str(exc), "pde.kind") from None

    def loss_weights(self) -> LossWeights:
        try:
            return LossWeights(self.get_float("loss.pde"), self.get_float("loss.dirichlet"),
                               self.get_float("loss.eikonal"), self.get_float("loss.neumann"))
        except InvalidInputError as exc:
            raise self._err(str(exc), "loss.pde") from None

    def hidden_widths(self) -> tuple:
        s = self.get("net.widths")
        try:
            w = tuple(int(x) for x in s.split(","))
        except ValueError:
            raise self._err(f"expected comma-separated integers, got {s!r}", "net.widths") from None
        if not w or min(w) < 1:
            raise self._err("widths must be positive", "net.widths")
        return w

    def thresholds(self) -> dict:
        out = {}
        for k in self.values:
            if k.startswith("eval.threshold."):
                out[k[len("eval.threshold."):]] = self.get_float(k)
        return out

    def validate(self):
        self.problem()
        self.loss_weights()
        self.hidden_widths()
        for key in ("seed", "workers", "sampling.total", "train.epochs", "train.checkpoint_every", "eval.n"):
            self.get_int(key)
        if self.get_int("train.epochs") < 1:
            raise self._err("epochs must be at least 1", "train.epochs")
        if not self.get_float("train.lr") > 0:
            raise self._err("learning rate must be positive", "train.lr")
        for key in ("train.beta1", "train.beta2"):
            if not 0 < self.get_float(key) < 1:
                raise self._err("must lie in (0, 1)", key)
        init = self.get("net.init")
        if init not in ("standard", "condition", "fit"):
            raise self._err(f"unknown init {init!r}", "net.init")
        if init == "condition":
            self.get_path("net.condition")
        if self.get("loss.mode") not in ("l1", "squared"):
            raise self._err("loss.mode must be l1 or squared", "loss.mode")
        if self.get_int("workers") < 1:
            raise self._err("workers must be at least 1", "workers")
        self.thresholds()

    def resolved_text(self) -> str:
        return "".join(f"{k} = {self.values[k]}\n" for k in sorted(self.values))
