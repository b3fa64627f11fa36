"""Run configuration: a strict `[section]` / `key = value` file format.

Strictness is the point. Unknown sections or keys raise instead of
being ignored, so a typo like `beam_widht` fails loudly rather than
silently running with the default. Comments start the line with `#`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError
from .network import NetworkConfig
from .synth import GenSpec


def parse_sections(text: str):
    """Raw parse: ordered {section: {key: value}} of stripped strings."""
    sections = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if not name:
                raise ConfigError(f"line {lineno}: empty section name")
            if name in sections:
                raise ConfigError(f"line {lineno}: duplicate section [{name}]")
            sections[name] = {}
            current = name
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {line!r}")
        if current is None:
            raise ConfigError(f"line {lineno}: key {key.strip()!r} before any [section]")
        key = key.strip()
        if key in sections[current]:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} in [{current}]")
        sections[current][key] = value.strip()
    return sections


class _Section:
    """One section's keys with type-checked, consume-tracked access."""

    def __init__(self, name, data):
        self.name = name
        self.data = dict(data)
        self.seen = set()

    def _fetch(self, key, required):
        self.seen.add(key)
        if key not in self.data:
            if required:
                raise ConfigError(f"[{self.name}] is missing required key {key!r}")
            return None
        return self.data[key]

    def _convert(self, key, raw, kind):
        try:
            return kind(raw)
        except ValueError:
            raise ConfigError(
                f"[{self.name}] {key} = {raw!r} is not a valid {kind.__name__}"
            ) from None

    def get_int(self, key, default=None, required=False):
        raw = self._fetch(key, required)
        return default if raw is None else self._convert(key, raw, int)

    def get_float(self, key, default=None, required=False):
        raw = self._fetch(key, required)
        return default if raw is None else self._convert(key, raw, float)

    def get_str(self, key, default=None, required=False):
        raw = self._fetch(key, required)
        return default if raw is None else raw

    def get_int_list(self, key, default=None, required=False):
        raw = self._fetch(key, required)
        if raw is None:
            return default
        try:
            return tuple(int(part.strip()) for part in raw.split(","))
        except ValueError:
            raise ConfigError(
                f"[{self.name}] {key} = {raw!r} is not a comma-separated integer list"
            ) from None

    def finish(self):
        unknown = sorted(set(self.data) - self.seen)
        if unknown:
            raise ConfigError(f"[{self.name}] has unknown key(s): {', '.join(unknown)}")


_KNOWN_SECTIONS = ("run", "network", "optimizer", "data", "gen", "decode", "train")


@dataclass(frozen=True)
class RunConfig:
    seed: int
    threads: int
    network: NetworkConfig
    rho: float
    epsilon: float
    batch_size: int
    epochs: int
    clip: float | None
    train_manifest: str | None
    test_manifest: str | None
    gen: GenSpec | None
    gen_out_dir: str | None
    gen_train_per_length: int
    gen_test_per_length: int
    decoder: str
    beam_width: int
    prune_threshold: float
    checkpoint_dir: str | None
    log_file: str | None
    raw_sections: dict = field(compare=False, repr=False, default_factory=dict)


def _parse_lengths(sec, raw):
    """Either `8-11` (inclusive range) or `1,2,3`."""
    if "-" in raw:
        lo_s, _, hi_s = raw.partition("-")
        try:
            lo, hi = int(lo_s), int(hi_s)
        except ValueError:
            raise ConfigError(f"[gen] lengths = {raw!r} is not a range or list") from None
        if hi < lo:
            raise ConfigError(f"[gen] lengths range {raw!r} is reversed")
        return tuple(range(lo, hi + 1))
    return sec.get_int_list("lengths", required=True)


def load_config(text: str) -> RunConfig:
    sections = parse_sections(text)
    unknown = sorted(set(sections) - set(_KNOWN_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")

    def section(name):
        return _Section(name, sections.get(name, {}))

    run = section("run")
    seed = run.get_int("seed", required=True)
    threads = run.get_int("threads", default=1)
    run.finish()
    if threads < 1:
        raise ConfigError(f"[run] threads must be positive, got {threads}")

    net_sec = section("network")
    defaults = NetworkConfig()
    network = NetworkConfig(
        input_height=net_sec.get_int("input_height", defaults.input_height),
        input_width=net_sec.get_int("input_width", defaults.input_width),
        channel_schedule=net_sec.get_int_list(
            "channels", defaults.channel_schedule
        ),
        lstm_hidden=net_sec.get_int("lstm_hidden", defaults.lstm_hidden),
        projection_units=net_sec.get_int("projection_units", defaults.projection_units),
        output_units=net_sec.get_int("output_units", defaults.output_units),
        scale=net_sec.get_float("scale", defaults.scale),
    )
    net_sec.finish()

    opt = section("optimizer")
    rho = opt.get_float("rho", default=0.95)
    epsilon = opt.get_float("epsilon", default=1e-6)
    batch_size = opt.get_int("batch_size", default=32)
    epochs = opt.get_int("epochs", default=1)
    clip_raw = opt.get_str("clip", default=None)
    opt.finish()
    clip = None
    if clip_raw is not None and clip_raw.lower() != "none":
        try:
            clip = float(clip_raw)
        except ValueError:
            raise ConfigError(f"[optimizer] clip = {clip_raw!r} is not a float") from None
    if batch_size < 1:
        raise ConfigError(f"[optimizer] batch_size must be positive, got {batch_size}")
    if epochs < 0:
        raise ConfigError(f"[optimizer] epochs must be non-negative, got {epochs}")

    has_data = "data" in sections
    has_gen = "gen" in sections
    if has_data and has_gen:
        raise ConfigError("config declares both [data] and [gen]; pick one source")

    train_manifest = test_manifest = None
    if has_data:
        data = section("data")
        train_manifest = data.get_str("train_manifest")
        test_manifest = data.get_str("test_manifest")
        data.finish()
        if train_manifest is None and test_manifest is None:
            raise ConfigError("[data] needs train_manifest and/or test_manifest")

    gen_spec = None
    gen_out_dir = None
    gen_train = gen_test = 0
    if has_gen:
        gen = section("gen")
        gen_out_dir = gen.get_str("out_dir", required=True)
        lengths_raw = gen._fetch("lengths", required=True)
        lengths = _parse_lengths(gen, lengths_raw)
        gen_train = gen.get_int("train_per_length", default=0)
        gen_test = gen.get_int("test_per_length", default=0)
        noise = gen.get_float("noise_level", default=0.0)
        jitter = gen.get_int("jitter", default=0)
        spacing = gen.get_int_list("spacing", default=(1, 2))
        glyph_scale = gen.get_int_list("glyph_scale", default=(2, 2))
        gen.finish()
        if gen_train < 0 or gen_test < 0:
            raise ConfigError("[gen] per-length counts must be non-negative")
        if len(spacing) != 2 or len(glyph_scale) != 2:
            raise ConfigError("[gen] spacing and glyph_scale take exactly two integers")
        distribution = {n: gen_train for n in lengths}
        gen_spec = GenSpec(
            length_distribution=distribution,
            image_height=network.input_height,
            image_width=network.input_width,
            seed=seed,
            noise_level=noise,
            jitter=jitter,
            spacing=tuple(spacing),
            scale_range=tuple(glyph_scale),
        )

    dec = section("decode")
    decoder = dec.get_str("decoder", default="greedy")
    beam_width = dec.get_int("beam_width", default=16)
    prune_threshold = dec.get_float("prune_threshold", default=0.0)
    dec.finish()
    if decoder not in ("greedy", "beam"):
        raise ConfigError(f"[decode] decoder must be greedy or beam, got {decoder!r}")

    train = section("train")
    checkpoint_dir = train.get_str("checkpoint_dir")
    log_file = train.get_str("log_file")
    train.finish()

    return RunConfig(
        seed=seed,
        threads=threads,
        network=network,
        rho=rho,
        epsilon=epsilon,
        batch_size=batch_size,
        epochs=epochs,
        clip=clip,
        train_manifest=train_manifest,
        test_manifest=test_manifest,
        gen=gen_spec,
        gen_out_dir=gen_out_dir,
        gen_train_per_length=gen_train,
        gen_test_per_length=gen_test,
        decoder=decoder,
        beam_width=beam_width,
        prune_threshold=prune_threshold,
        checkpoint_dir=checkpoint_dir,
        log_file=log_file,
        raw_sections=sections,
    )


def load_config_file(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return load_config(text)
