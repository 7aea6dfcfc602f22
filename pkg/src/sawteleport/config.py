"""Run configuration: plain-text parsing, validation and provenance.

The format is sections in square brackets with `key = value` lines and
`#` comments.  Every key is known in advance and carries a default, so a
minimal (even empty) file resolves to the paper parameters; every value
that falls back to its default is logged with a "defaulted" line.
Unknown keys, misplaced keys and out-of-range values are reported with
their line number.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .propagator import NumericsParams
from .protocol import ProtocolConfig


class ConfigError(ValueError):
    """Invalid configuration text or values (CLI exit code 2)."""

    def __init__(self, message, line=None):
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")


def _float(text, line, key):
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {text!r}", line) from None


def _int(text, line, key):
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {text!r}", line) from None


def _bool(text, line, key):
    low = text.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {text!r}", line)


def _enum(options):
    def parse(text, line, key):
        if text not in options:
            raise ConfigError(f"{key}: expected one of {options}, got {text!r}", line)
        return text

    return parse


def _str(text, line, key):
    return text


def _positive(value, line, key):
    if not value > 0:
        raise ConfigError(f"{key}: must be strictly positive, got {value}", line)
    return value


def _nonneg_int(value, line, key):
    if value < 0:
        raise ConfigError(f"{key}: must be non-negative, got {value}", line)
    return value


# (section, key) -> (parser, default, range check or None)
_D = geo.PhysicalParams()
_SCHEMA = {
    "physical": {
        "saw_amplitude_ev": (_float, _D.saw_amplitude, _positive),
        "saw_wavelength_nm": (_float, _D.saw_wavelength, _positive),
        "sound_speed_nm_fs": (_float, _D.sound_speed, _positive),
        "screening_length_nm": (_float, _D.screening_length, _positive),
        "relative_permittivity": (_float, _D.relative_permittivity, _positive),
        "effective_mass_ratio": (_float, _D.effective_mass_ratio, _positive),
        "coulomb_constant_ev_nm": (_float, _D.coulomb_constant, _positive),
        "coulomb_r_min_nm": (_float, _D.coulomb_r_min, _positive),
    },
    "numerics": {
        "dy_nm": (_float, 1.0, _positive),
        "dt_fs": (_float, 1.0, _positive),
        "window_width_nm": (_float, 200.0, _positive),
        "window_margin_sigma": (_float, 4.0, _positive),
        "convergence_refinement": (_float, 2.0, _positive),
        "boundary_density_limit": (_float, 1e-10, _positive),
        "coupler_pad_nm": (_float, 50.0, _positive),
    },
    "blueprint": {
        "layout": (_enum(("default", "compact")), "default", None),
        "wire_pitch_far_nm": (_float, 60.0, _positive),
        "coupler12_plateau_length_nm": (_float, 150.0, _positive),
        "coupler12_plateau_separation_nm": (_float, 5.0, _positive),
        "coupler12_ramp_length_nm": (_float, geo.DEFAULT_RAMP_LENGTH, _positive),
        "coupler23_plateau_length_nm": (_float, 150.0, _positive),
        "coupler23_plateau_separation_nm": (_float, 5.0, _positive),
        "coupler23_ramp_length_nm": (_float, geo.DEFAULT_RAMP_LENGTH, _positive),
    },
    "protocol": {
        "phi1_rad": (_float, 2.0 * np.pi / 3.0, None),
        "phi2_rad": (_float, np.pi / 2.0, None),
        "mode": (_enum(("ideal", "hybrid", "dynamic")), "hybrid", None),
        "gamma_prep_rad": (_float, 0.88 * np.pi, None),
        "gamma_rot_rad": (_float, 0.88 * np.pi, None),
        "measurement": (_enum(("enumerate", "sample")), "enumerate", None),
        "seed": (_int, -1, None),  # -1 means unset
        "schmidt_tolerance": (_float, 3e-4, _positive),
        "rank_limit": (_int, 8, _nonneg_int),
    },
    "output": {
        "directory": (_str, "out", None),
        "snapshots": (_bool, False, None),
        "figures": (_bool, False, None),
    },
}


@dataclass
class RunConfig:
    """Resolved configuration with provenance for every key."""

    values: dict            # (section, key) -> value
    provenance: dict        # (section, key) -> "file" | "flag" | "default"
    log_lines: list[str] = field(default_factory=list)

    def get(self, section, key):
        return self.values[(section, key)]

    def set_flag(self, section, key, value):
        self.values[(section, key)] = value
        self.provenance[(section, key)] = "flag"

    def seed(self) -> int | None:
        s = self.get("protocol", "seed")
        return None if s < 0 else s

    def serialize(self, include_output: bool = True) -> str:
        """Canonical text round-trippable through parse_config."""
        out = []
        for section in _SCHEMA:
            if section == "output" and not include_output:
                continue
            out.append(f"[{section}]")
            for key in _SCHEMA[section]:
                v = self.values[(section, key)]
                if isinstance(v, bool):
                    txt = "true" if v else "false"
                elif isinstance(v, float):
                    txt = format(v, ".17g")
                else:
                    txt = str(v)
                out.append(f"{key} = {txt}")
            out.append("")
        return "\n".join(out)

    def content_hash(self) -> str:
        """Hash of the result-determining sections (output location excluded)."""
        return hashlib.sha256(self.serialize(include_output=False).encode()).hexdigest()

    def physical(self) -> geo.PhysicalParams:
        g = lambda k: self.get("physical", k)
        return geo.PhysicalParams(
            saw_amplitude=g("saw_amplitude_ev"),
            saw_wavelength=g("saw_wavelength_nm"),
            sound_speed=g("sound_speed_nm_fs"),
            screening_length=g("screening_length_nm"),
            relative_permittivity=g("relative_permittivity"),
            effective_mass_ratio=g("effective_mass_ratio"),
            coulomb_constant=g("coulomb_constant_ev_nm"),
            coulomb_r_min=g("coulomb_r_min_nm"),
        )

    def numerics(self) -> NumericsParams:
        g = lambda k: self.get("numerics", k)
        return NumericsParams(
            dy=g("dy_nm"),
            dt=g("dt_fs"),
            window_width=g("window_width_nm"),
            window_margin_sigma=g("window_margin_sigma"),
            convergence_refinement=g("convergence_refinement"),
            boundary_density_limit=g("boundary_density_limit"),
            coupler_pad=g("coupler_pad_nm"),
        )

    def blueprint(self) -> geo.DeviceBlueprint:
        g = lambda k: self.get("blueprint", k)
        phi1 = self.get("protocol", "phi1_rad")
        phi2 = self.get("protocol", "phi2_rad")
        if g("layout") == "compact":
            # compact keeps its own small-coupler defaults; explicitly set
            # coupler12 keys (file or flag) pass through, e.g. for sweeps
            kwargs = {}
            for key, name in (
                ("coupler12_plateau_length_nm", "plateau_length"),
                ("coupler12_plateau_separation_nm", "plateau_separation"),
                ("coupler12_ramp_length_nm", "ramp_length"),
            ):
                if self.provenance[("blueprint", key)] != "default":
                    kwargs[name] = g(key)
            return geo.compact_blueprint(phi1=phi1, phi2=phi2, **kwargs)
        c12 = geo.CouplerGeometry(
            plateau_length=g("coupler12_plateau_length_nm"),
            plateau_separation=g("coupler12_plateau_separation_nm"),
            ramp_length=g("coupler12_ramp_length_nm"),
        )
        c23 = geo.CouplerGeometry(
            plateau_length=g("coupler23_plateau_length_nm"),
            plateau_separation=g("coupler23_plateau_separation_nm"),
            ramp_length=g("coupler23_ramp_length_nm"),
        )
        return geo.default_blueprint(
            phi1=phi1,
            phi2=phi2,
            coupler12=c12,
            coupler23=c23,
            wire_pitch_far=g("wire_pitch_far_nm"),
            params=self.physical(),
        )

    def protocol_config(self) -> ProtocolConfig:
        g = lambda k: self.get("protocol", k)
        try:
            return ProtocolConfig(
                blueprint=self.blueprint(),
                physical=self.physical(),
                numerics=self.numerics(),
                phi1=g("phi1_rad"),
                phi2=g("phi2_rad"),
                mode=g("mode"),
                gamma_prep=g("gamma_prep_rad"),
                gamma_rot=g("gamma_rot_rad"),
                measurement_mode=g("measurement"),
                seed=self.seed(),
                schmidt_tolerance=g("schmidt_tolerance"),
                rank_limit=g("rank_limit"),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def parse_config(text: str) -> RunConfig:
    """Parse and validate configuration text.

    Every key missing from the file is defaulted and logged; unknown keys
    and range violations raise ConfigError with the offending line.
    """
    values = {}
    provenance = {}
    seen_section = None
    file_keys = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in _SCHEMA:
                raise ConfigError(f"unknown section [{name}]", lineno)
            seen_section = name
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if seen_section is None:
            raise ConfigError(f"key {key!r} appears before any section", lineno)
        if key not in _SCHEMA[seen_section]:
            raise ConfigError(f"unknown key {key!r} in section [{seen_section}]", lineno)
        if (seen_section, key) in file_keys:
            raise ConfigError(f"duplicate key {key!r} in section [{seen_section}]", lineno)
        file_keys[(seen_section, key)] = (val, lineno)

    log_lines = []
    for section, keys in _SCHEMA.items():
        for key, (parser, default, check) in keys.items():
            if (section, key) in file_keys:
                raw_val, lineno = file_keys[(section, key)]
                value = parser(raw_val, lineno, key)
                if check is not None:
                    value = check(value, lineno, key)
                values[(section, key)] = value
                provenance[(section, key)] = "file"
            else:
                values[(section, key)] = default
                provenance[(section, key)] = "default"
                log_lines.append(f"defaulted [{section}] {key} = {default}")
    return RunConfig(values, provenance, log_lines)


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return parse_config("")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    return parse_config(text)
