"""Scenario definition: INI-style config files, validation, builtin presets.

A scenario is exactly two subnets joined by an IP cloud plus one call
process.  parse and emit round-trip: emit writes every resolved field, so a
scenario's digest changes exactly when some field does.

Grammar (all keys optional unless noted; values are numbers or names):

    [scenario]
    name = wifi-wifi            ; required for files
    codec = g711                ; g711 | g729 | g7231
    run_length_s = 3600
    warm_up_s = 300
    bucket_width_s = 10
    master_seed = 1
    repetitions = 1

    [subnet.<name>]             ; exactly two such sections
    kind = wifi                 ; wifi | umts  (required)
    stations = 4
    ; wifi keys: data_rate_bps slot_us sifs_us difs_us cw_min cw_max
    ;            retry_limit phy_mac_overhead_bytes queue_cap
    ; umts keys: tti_ms bearer_rate_bps bler max_rlc_retx nodeb_rnc_delay_ms
    ;            rnc_proc_delay_ms cn_delay_ms air_interleave_delay_ms queue_cap

    [cloud]
    base_delay_ms = 30
    jitter_half_width_ms = 5
    loss_prob = 0

    [calls]
    inter_arrival_s = 60
    duration_mean_s = 180
    caller_subnet = <first subnet>
    callee_subnet = <second subnet>
    answer_delay_s = 2
    invite_timeout_s = 32
"""

from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass, replace

from .simcore import SimError
from .traffic import CODECS, DEFAULT_CODEC

NAME_RE = re.compile(r"^[A-Za-z0-9._-]+$")


class ParseError(SimError):
    """Config file could not be read: syntax, unknown key, or bad value."""


class ValidationError(SimError):
    """Config parsed but breaks a scenario invariant."""


@dataclass(frozen=True)
class WifiParams:
    data_rate_bps: int = 11_000_000
    slot_us: int = 20
    sifs_us: int = 10
    difs_us: int = 50
    cw_min: int = 31
    cw_max: int = 1023
    retry_limit: int = 7
    phy_mac_overhead_bytes: int = 58
    queue_cap: int = 50


@dataclass(frozen=True)
class UmtsParams:
    tti_us: int = 10_000
    bearer_rate_bps: int = 64_000
    bler: float = 0.02
    max_rlc_retx: int = 2
    nodeb_rnc_delay_us: int = 15_000
    rnc_proc_delay_us: int = 25_000
    cn_delay_us: int = 25_000
    air_interleave_delay_us: int = 40_000
    queue_cap: int = 50


@dataclass(frozen=True)
class SubnetSpec:
    name: str
    kind: str  # wifi | umts
    stations: int = 4
    wifi: WifiParams | None = None
    umts: UmtsParams | None = None

    def workstations(self) -> list[str]:
        return [f"{self.name}-ws{i}" for i in range(1, self.stations + 1)]


@dataclass(frozen=True)
class CloudSpec:
    base_delay_us: int = 30_000
    jitter_half_width_us: int = 5_000
    loss_prob: float = 0.0


@dataclass(frozen=True)
class CallSpec:
    inter_arrival_us: int = 60_000_000
    duration_mean_us: int = 180_000_000
    caller_subnet: str = ""
    callee_subnet: str = ""
    answer_delay_us: int = 2_000_000
    invite_timeout_us: int = 32_000_000


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    subnets: tuple[SubnetSpec, ...]
    cloud: CloudSpec = CloudSpec()
    calls: CallSpec = CallSpec()
    codec: str = DEFAULT_CODEC
    run_length_us: int = 3_600_000_000
    warm_up_us: int = 300_000_000
    bucket_width_us: int = 10_000_000
    master_seed: int = 1
    repetitions: int = 1


def validate(spec: ScenarioSpec) -> ScenarioSpec:
    def fail(msg):
        raise ValidationError(f"scenario {spec.name!r}: {msg}")

    if not NAME_RE.match(spec.name or ""):
        fail("name must be a plain token (letters, digits, . _ -)")
    if len(spec.subnets) != 2:
        fail(f"exactly 2 subnets required, got {len(spec.subnets)}")
    names = [s.name for s in spec.subnets]
    if len(set(names)) != 2:
        fail("subnet names must be distinct")
    for sub in spec.subnets:
        if not NAME_RE.match(sub.name):
            fail(f"subnet name {sub.name!r} must be a plain token")
        if sub.kind not in ("wifi", "umts"):
            fail(f"subnet {sub.name}: kind must be wifi or umts")
        if sub.stations < 1:
            fail(f"subnet {sub.name}: stations must be >= 1")
        if sub.kind == "wifi":
            p = sub.wifi
            if p is None or sub.umts is not None:
                fail(f"subnet {sub.name}: wifi subnet needs wifi parameters only")
            if not p.cw_min < p.cw_max:
                fail(f"subnet {sub.name}: cw_min must be < cw_max")
            if p.retry_limit < 1:
                fail(f"subnet {sub.name}: retry_limit must be >= 1")
            if p.data_rate_bps <= 0:
                fail(f"subnet {sub.name}: data_rate_bps must be > 0")
        else:
            p = sub.umts
            if p is None or sub.wifi is not None:
                fail(f"subnet {sub.name}: umts subnet needs umts parameters only")
            if not 0 <= p.bler < 1:
                fail(f"subnet {sub.name}: bler must be in [0, 1)")
            if p.max_rlc_retx < 0:
                fail(f"subnet {sub.name}: max_rlc_retx must be >= 0")
            if p.tti_us <= 0:
                fail(f"subnet {sub.name}: tti_ms must be > 0")
            if min(p.nodeb_rnc_delay_us, p.rnc_proc_delay_us, p.cn_delay_us,
                   p.air_interleave_delay_us) < 0:
                fail(f"subnet {sub.name}: delays must be >= 0")
    if spec.codec not in CODECS:
        fail(f"unknown codec {spec.codec!r} (have {', '.join(sorted(CODECS))})")
    if spec.run_length_us <= spec.warm_up_us:
        fail("run_length_s must exceed warm_up_s")
    if spec.bucket_width_us <= 0:
        fail("bucket_width_s must be > 0")
    if spec.repetitions < 1:
        fail("repetitions must be >= 1")
    if spec.cloud.base_delay_us - spec.cloud.jitter_half_width_us < 0:
        fail("cloud delay range must not go negative")
    if not 0 <= spec.cloud.loss_prob <= 1:
        fail("cloud loss_prob must be in [0, 1]")
    if spec.calls.caller_subnet not in names or spec.calls.callee_subnet not in names:
        fail("calls must reference the declared subnets")
    if spec.calls.inter_arrival_us <= 0 or spec.calls.duration_mean_us <= 0:
        fail("call means must be > 0")
    return spec


# -- parsing -----------------------------------------------------------------

_US = ("us", 1)
_MS = ("ms", 1_000)
_S = ("s", 1_000_000)

# key -> (dataclass field, converter tag); converter tags: int, float, prob,
# or a (suffix, scale) pair turning a float quantity into integer microseconds
_SCENARIO_KEYS = {
    "name": ("name", "token"),
    "codec": ("codec", "token"),
    "run_length_s": ("run_length_us", _S),
    "warm_up_s": ("warm_up_us", _S),
    "bucket_width_s": ("bucket_width_us", _S),
    "master_seed": ("master_seed", "int"),
    "repetitions": ("repetitions", "int"),
}
_WIFI_KEYS = {
    "data_rate_bps": ("data_rate_bps", "int"),
    "slot_us": ("slot_us", _US),
    "sifs_us": ("sifs_us", _US),
    "difs_us": ("difs_us", _US),
    "cw_min": ("cw_min", "int"),
    "cw_max": ("cw_max", "int"),
    "retry_limit": ("retry_limit", "int"),
    "phy_mac_overhead_bytes": ("phy_mac_overhead_bytes", "int"),
    "queue_cap": ("queue_cap", "int"),
}
_UMTS_KEYS = {
    "tti_ms": ("tti_us", _MS),
    "bearer_rate_bps": ("bearer_rate_bps", "int"),
    "bler": ("bler", "float"),
    "max_rlc_retx": ("max_rlc_retx", "int"),
    "nodeb_rnc_delay_ms": ("nodeb_rnc_delay_us", _MS),
    "rnc_proc_delay_ms": ("rnc_proc_delay_us", _MS),
    "cn_delay_ms": ("cn_delay_us", _MS),
    "air_interleave_delay_ms": ("air_interleave_delay_us", _MS),
    "queue_cap": ("queue_cap", "int"),
}
_CLOUD_KEYS = {
    "base_delay_ms": ("base_delay_us", _MS),
    "jitter_half_width_ms": ("jitter_half_width_us", _MS),
    "loss_prob": ("loss_prob", "float"),
}
_CALLS_KEYS = {
    "inter_arrival_s": ("inter_arrival_us", _S),
    "duration_mean_s": ("duration_mean_us", _S),
    "caller_subnet": ("caller_subnet", "token"),
    "callee_subnet": ("callee_subnet", "token"),
    "answer_delay_s": ("answer_delay_us", _S),
    "invite_timeout_s": ("invite_timeout_us", _S),
}


def _convert(section: str, key: str, raw: str, how):
    try:
        if how == "token":
            return raw.strip()
        if how == "int":
            return int(raw)
        if how == "float":
            return float(raw)
        _suffix, scale = how
        return round(float(raw) * scale)
    except ValueError:
        raise ParseError(f"[{section}] {key}: cannot parse {raw!r}") from None


def _section_kwargs(section: str, items, keymap, skip=()) -> dict:
    out = {}
    for key, raw in items:
        if key in skip:
            continue
        if key not in keymap:
            raise ParseError(f"[{section}] unknown key {key!r}")
        field_name, how = keymap[key]
        out[field_name] = _convert(section, key, raw, how)
    return out


def parse_scenario_text(text: str, default_name: str = "") -> ScenarioSpec:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ParseError(str(exc)) from None

    subnet_sections = [s for s in cp.sections() if s.startswith("subnet.")]
    known = {"scenario", "cloud", "calls", *subnet_sections}
    for section in cp.sections():
        if section not in known:
            raise ParseError(f"unknown section [{section}]")

    top = _section_kwargs("scenario", cp.items("scenario") if cp.has_section("scenario") else [],
                          _SCENARIO_KEYS)
    subnets = []
    for section in subnet_sections:
        name = section[len("subnet."):]
        items = dict(cp.items(section))
        kind = items.get("kind")
        if kind not in ("wifi", "umts"):
            raise ParseError(f"[{section}] kind must be wifi or umts")
        stations_raw = items.get("stations", "4")
        stations = _convert(section, "stations", stations_raw, "int")
        keymap = _WIFI_KEYS if kind == "wifi" else _UMTS_KEYS
        params = _section_kwargs(section, items.items(), keymap,
                                 skip=("kind", "stations"))
        if kind == "wifi":
            subnets.append(SubnetSpec(name, kind, stations, wifi=WifiParams(**params)))
        else:
            subnets.append(SubnetSpec(name, kind, stations, umts=UmtsParams(**params)))
    if len(subnets) != 2:
        raise ValidationError(f"exactly 2 [subnet.*] sections required, got {len(subnets)}")

    cloud = CloudSpec(**_section_kwargs(
        "cloud", cp.items("cloud") if cp.has_section("cloud") else [], _CLOUD_KEYS))
    calls_kwargs = _section_kwargs(
        "calls", cp.items("calls") if cp.has_section("calls") else [], _CALLS_KEYS)
    calls_kwargs.setdefault("caller_subnet", subnets[0].name)
    calls_kwargs.setdefault("callee_subnet", subnets[1].name)
    calls = CallSpec(**calls_kwargs)

    top.setdefault("name", default_name)
    spec = ScenarioSpec(subnets=tuple(subnets), cloud=cloud, calls=calls, **top)
    return validate(spec)


def parse_scenario(path) -> ScenarioSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    import os

    stem = os.path.splitext(os.path.basename(str(path)))[0]
    return parse_scenario_text(text, default_name=stem)


# -- emission ----------------------------------------------------------------


def _emit_value(value, how) -> str:
    if how in ("token", "int", "float"):
        return str(value)
    _suffix, scale = how
    scaled = value / scale
    return str(int(scaled)) if float(scaled).is_integer() else repr(scaled)


def _emit_section(lines: list[str], header: str, obj, keymap, extra=()) -> None:
    lines.append(f"[{header}]")
    for key, value in extra:
        lines.append(f"{key} = {value}")
    for key, (field_name, how) in keymap.items():
        lines.append(f"{key} = {_emit_value(getattr(obj, field_name), how)}")
    lines.append("")


def emit_scenario(spec: ScenarioSpec) -> str:
    """Canonical text form listing every resolved field; parse inverts it."""
    lines: list[str] = []
    _emit_section(lines, "scenario", spec, _SCENARIO_KEYS)
    for sub in spec.subnets:
        keymap = _WIFI_KEYS if sub.kind == "wifi" else _UMTS_KEYS
        params = sub.wifi if sub.kind == "wifi" else sub.umts
        _emit_section(lines, f"subnet.{sub.name}", params, keymap,
                      extra=(("kind", sub.kind), ("stations", sub.stations)))
    _emit_section(lines, "cloud", spec.cloud, _CLOUD_KEYS)
    _emit_section(lines, "calls", spec.calls, _CALLS_KEYS)
    return "\n".join(lines)


def spec_digest(spec: ScenarioSpec) -> str:
    return hashlib.sha256(emit_scenario(spec).encode()).hexdigest()


def spec_as_dict(spec: ScenarioSpec) -> dict:
    """Fully resolved key/value view, for the run manifest."""
    out: dict = {"scenario": {}, "cloud": {}, "calls": {}}
    for key, (field_name, how) in _SCENARIO_KEYS.items():
        out["scenario"][key] = _coerce(getattr(spec, field_name), how)
    for sub in spec.subnets:
        keymap = _WIFI_KEYS if sub.kind == "wifi" else _UMTS_KEYS
        params = sub.wifi if sub.kind == "wifi" else sub.umts
        block = {"kind": sub.kind, "stations": sub.stations}
        for key, (field_name, how) in keymap.items():
            block[key] = _coerce(getattr(params, field_name), how)
        out[f"subnet.{sub.name}"] = block
    for key, (field_name, how) in _CLOUD_KEYS.items():
        out["cloud"][key] = _coerce(getattr(spec.cloud, field_name), how)
    for key, (field_name, how) in _CALLS_KEYS.items():
        out["calls"][key] = _coerce(getattr(spec.calls, field_name), how)
    return out


def _coerce(value, how):
    if how in ("token", "int", "float"):
        return value
    _suffix, scale = how
    scaled = value / scale
    return int(scaled) if float(scaled).is_integer() else scaled


# -- builtin presets ---------------------------------------------------------

# Two WiFi cities, two UMTS cities, and the mixed pair.  The UMTS air link is
# deliberately error-prone (bler 0.3 with 3 retransmissions) so its
# TTI-quantized retransmission jitter and loss dominate, and the cloud is kept
# jitter-free so access behavior, not the backbone, separates the scenarios.
_CAL_UMTS = UmtsParams(bler=0.3, max_rlc_retx=3)
_CAL_CLOUD = CloudSpec(base_delay_us=30_000, jitter_half_width_us=0, loss_prob=0.0)


def _builtin(name: str, sub1: SubnetSpec, sub2: SubnetSpec) -> ScenarioSpec:
    return validate(ScenarioSpec(
        name=name,
        subnets=(sub1, sub2),
        cloud=_CAL_CLOUD,
        calls=CallSpec(caller_subnet=sub1.name, callee_subnet=sub2.name),
    ))


def _wifi_city(city: str) -> SubnetSpec:
    return SubnetSpec(city, "wifi", 4, wifi=WifiParams())


def _umts_city(city: str) -> SubnetSpec:
    return SubnetSpec(city, "umts", 4, umts=_CAL_UMTS)


def builtin_scenario(name: str) -> ScenarioSpec:
    if name == "wifi-wifi":
        return _builtin(name, _wifi_city("hawaii"), _wifi_city("florida"))
    if name == "umts-umts":
        return _builtin(name, _umts_city("new-york"), _umts_city("california"))
    if name == "wifi-umts":
        return _builtin(name, _wifi_city("hawaii"), _umts_city("california"))
    raise ValidationError(f"unknown builtin scenario {name!r} "
                          f"(have wifi-wifi, umts-umts, wifi-umts)")


BUILTIN_NAMES = ("wifi-wifi", "umts-umts", "wifi-umts")


def with_overrides(spec: ScenarioSpec, *, master_seed: int | None = None,
                   repetitions: int | None = None) -> ScenarioSpec:
    if master_seed is not None:
        spec = replace(spec, master_seed=master_seed)
    if repetitions is not None:
        spec = replace(spec, repetitions=repetitions)
    return validate(spec)
