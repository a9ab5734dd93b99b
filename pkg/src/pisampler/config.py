"""Run configuration: INI-style sections, validated against a fixed schema.

Files are parsed with :mod:`configparser`; a JSON file with the same
section/key structure (as written to ``config.json`` by every command) is
accepted too, so a resolved configuration can be fed back verbatim.
"""
import configparser
import json
from dataclasses import dataclass

from .baselines import HmcConfig, SmcConfig
from .errors import ConfigurationError
from .sde import SdeConfig
from .targets import make_target
from .trainer import TrainConfig

REQUIRED = object()


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    if isinstance(text, (int, float)):
        return [float(text)]
    return [float(v) for v in str(text).replace(",", " ").split()]


def _words(text):
    if isinstance(text, (list, tuple)):
        return [str(v) for v in text]
    return [w for w in str(text).replace(",", " ").split() if w]


def _bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


TARGET_KEYS = {
    "gaussian": {"mean": (_floats, [0.0]), "cov_diag": (_floats, [1.0]),
                 "scale_log_z": (float, 0.0)},
    "mog": {},
    "funnel": {"dim": (int, 10)},
    "rings": {},
    "lgcp": {"grid_side": (int, 8), "beta": (float, 1.0 / 33.0), "observations": (str, "")},
}

SCHEMA = {
    "sde": {"horizon": (float, REQUIRED), "steps": (int, REQUIRED), "seed": (int, 0)},
    "train": {"policy": (str, "grad"), "epochs": (int, 30), "batches_per_epoch": (int, 50),
              "batch_size": (int, 300), "lr": (float, 5e-3), "grad_clip_norm": (float, 1.0),
              "score_clip": (float, 1e2), "hidden": (int, 64), "num_freq": (int, 64),
              "activation": (str, "tanh"), "score_gradient": (str, "exact"),
              "per_coordinate": (_bool, False)},
    "sample": {"n": (int, 2000)},
    "output": {"dir": (str, "run")},
    "hmc": {"n_iterations": (int, 10), "leapfrog_steps": (int, 10), "step_size": (float, 0.1)},
    "smc": {"n_particles": (int, 2000), "n_temperatures": (int, 10),
            "resample_threshold": (float, 0.5)},
    "benchmark": {"methods": (_words, ["zero", "pis-grad", "smc", "hmc"]),
                  "repetitions": (int, 20), "n": (int, 2000)},
    "oracle": {"times": (_floats, [0.0, 0.2, 0.4, 0.6, 0.8]),
               "points": (_floats, [-1.0, -0.5, 0.0, 0.5, 1.0]),
               "rollouts": (int, 100000), "checkpoint": (str, "")},
}
SECTIONS = ("target",) + tuple(SCHEMA)


def _locate(lines, section, key=None):
    """1-based line of ``key`` in ``section`` (or of the section header)."""
    current, header_line = None, None
    for no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current == section:
                header_line = no
            continue
        if current == section and key is not None and "=" in line:
            if line.split("=", 1)[0].strip() == key:
                return no
    return header_line


@dataclass
class RunConfig:
    """Fully resolved configuration: ``sections[name][key] -> value``."""

    sections: dict

    # --- construction ------------------------------------------------------
    @classmethod
    def from_dict(cls, raw, source="<config>", lines=()):
        def fail(msg, section, key=None):
            no = _locate(lines, section, key) if lines else None
            where = f"{source}:{no}" if no else source
            raise ConfigurationError(f"{where}: {msg}")

        for section in raw:
            if section not in SECTIONS:
                fail(f"unknown section [{section}]", section)
        target_raw = dict(raw.get("target", {}))
        if "name" not in target_raw:
            fail("missing required key 'name' in [target]", "target")
        name = str(target_raw.pop("name"))
        if name not in TARGET_KEYS:
            fail(f"unknown target {name!r}", "target", "name")
        resolved = {"target": {"name": name}}
        schema = dict(SCHEMA, target=TARGET_KEYS[name])
        for section, keys in schema.items():
            given = target_raw if section == "target" else dict(raw.get(section, {}))
            out = resolved.setdefault(section, {})
            for key in given:
                if key not in keys:
                    fail(f"unknown key '{key}' in [{section}]", section, key)
            for key, (conv, default) in keys.items():
                if key in given:
                    try:
                        out[key] = conv(given[key])
                    except (TypeError, ValueError) as exc:
                        fail(f"bad value for '{key}' in [{section}]: {exc}", section, key)
                elif default is REQUIRED:
                    fail(f"missing required key '{key}' in [{section}]", section)
                else:
                    out[key] = list(default) if isinstance(default, list) else default
        cfg = cls(resolved)
        try:
            cfg.sde_config()
            cfg.train_config()
            cfg.smc_config()
        except ConfigurationError as exc:
            raise ConfigurationError(f"{source}: {exc}") from exc
        return cfg

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        if text.lstrip().startswith("{"):
            try:
                return cls.from_dict(json.loads(text), str(path))
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
        parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
        parser.optionxform = str
        try:
            parser.read_string(text, source=str(path))
        except configparser.Error as exc:
            no = getattr(exc, "lineno", None)
            where = f"{path}:{no}" if no else str(path)
            raise ConfigurationError(f"{where}: {exc.message if hasattr(exc, 'message') else exc}") \
                from exc
        raw = {s: dict(parser.items(s)) for s in parser.sections()}
        return cls.from_dict(raw, str(path), text.splitlines())

    # --- views -------------------------------------------------------------
    def __getitem__(self, section):
        return self.sections[section]

    def to_dict(self):
        return json.loads(json.dumps(self.sections))

    def with_overrides(self, seed=None, out=None):
        data = self.to_dict()
        if seed is not None:
            data["sde"]["seed"] = int(seed)
        if out is not None:
            data["output"]["dir"] = str(out)
        return RunConfig.from_dict(data)

    @property
    def seed(self):
        return self.sections["sde"]["seed"]

    def target(self):
        t = dict(self.sections["target"])
        return make_target(t.pop("name"), **t)

    def target_dim(self):
        t = self.sections["target"]
        name = t["name"]
        if name == "gaussian":
            return len(t["mean"])
        return {"mog": 2, "rings": 2, "funnel": t.get("dim", 10),
                "lgcp": t.get("grid_side", 8) ** 2}[name]

    def sde_config(self, dim=None):
        s = self.sections["sde"]
        return SdeConfig(self.target_dim() if dim is None else dim, s["horizon"], s["steps"],
                         s["seed"])

    def train_config(self):
        t = self.sections["train"]
        return TrainConfig(self.sde_config(), t["epochs"], t["batches_per_epoch"],
                           t["batch_size"], t["lr"], t["grad_clip_norm"], self.seed)

    def policy_kwargs(self):
        t = self.sections["train"]
        kw = {"hidden": t["hidden"], "num_freq": t["num_freq"], "activation": t["activation"]}
        if t["policy"] == "grad":
            kw.update(grad_clip=t["score_clip"], per_coordinate=t["per_coordinate"],
                      score_gradient=t["score_gradient"])
        return kw

    def hmc_config(self):
        h = self.sections["hmc"]
        return HmcConfig(h["n_iterations"], h["leapfrog_steps"], h["step_size"])

    def smc_config(self):
        s = self.sections["smc"]
        return SmcConfig(s["n_particles"], s["n_temperatures"], self.hmc_config(),
                         s["resample_threshold"])
