"""Frequency-dependent electromagnetic primitives.

Time-harmonic convention throughout the package is ``exp(+j*omega*t)``.
Under it a lossy medium has a complex relative permittivity with a
non-positive imaginary part, ``eta = eps_r - j*sigma/(omega*eps_0)``, and a
wave travelling a distance ``d`` accumulates the phase ``exp(-j*k*d)``.

Reflection coefficients use the field convention in which the parallel (TM)
coefficient of a perfect conductor is ``+1`` and the perpendicular (TE)
coefficient is ``-1``. At normal incidence both have the same magnitude but
opposite sign.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Mapping

import numpy as np
import yaml
from scipy import constants

C0 = constants.c
EPS0 = constants.epsilon_0

#: Knife-edge approximation is only used above this Fresnel parameter.
KNIFE_EDGE_NU_MIN = -0.78


class PECMaterialError(ValueError):
    """Raised when a finite permittivity is requested for a perfect conductor."""


@dataclass(frozen=True)
class Material:
    name: str
    eps_r: float
    sigma_coeff: float = 0.0
    sigma_exp: float = 0.0
    is_pec: bool = False
    approximate: bool = False

    def __post_init__(self):
        if not self.is_pec and self.eps_r < 1.0:
            raise ValueError(f"material {self.name!r}: eps_r must be >= 1, got {self.eps_r}")
        if self.sigma_coeff < 0.0:
            raise ValueError(f"material {self.name!r}: sigma_coeff must be >= 0")

    def conductivity(self, f_c: float) -> float:
        """Conductivity in S/m at carrier ``f_c`` (Hz), ``c * f_GHz**d``."""
        return self.sigma_coeff * (f_c / 1e9) ** self.sigma_exp


@dataclass(frozen=True)
class ReflectionCoeffs:
    gamma_perp: complex
    gamma_par: complex

    def select(self, polarization: str) -> complex:
        if polarization == "perpendicular":
            return self.gamma_perp
        if polarization == "parallel":
            return self.gamma_par
        raise ValueError(f"unknown polarization {polarization!r}")


PEC = Material("pec", 1.0, is_pec=True)


def wavelength(f_c: float) -> float:
    return C0 / f_c


def complex_permittivity(m: Material, f_c: float) -> complex:
    """Complex relative permittivity of ``m`` at ``f_c`` Hz.

    Raises :class:`PECMaterialError` for perfect conductors, which have no
    finite permittivity; callers should use the PEC shortcut in
    :func:`reflection_coeffs` instead.
    """
    if f_c <= 0:
        raise ValueError("carrier frequency must be positive")
    if m.is_pec:
        raise PECMaterialError(f"material {m.name!r} is PEC; use the PEC shortcut")
    sigma = m.conductivity(f_c)
    return complex(m.eps_r, -sigma / (2.0 * math.pi * f_c * EPS0))


def fresnel_coeffs(eps: complex | None, theta_i: float) -> ReflectionCoeffs:
    """Fresnel reflection coefficients for incidence angle ``theta_i`` (rad).

    ``eps=None`` stands for a perfect electric conductor.
    """
    if not (0.0 <= theta_i < math.pi / 2):
        raise ValueError(f"incidence angle must lie in [0, pi/2), got {theta_i}")
    if eps is None:
        return ReflectionCoeffs(-1.0 + 0j, 1.0 + 0j)
    eps = complex(eps)
    cos_t = math.cos(theta_i)
    # principal branch keeps Re >= 0 and Im <= 0 for Im(eps) <= 0
    root = np.sqrt(eps - math.sin(theta_i) ** 2 + 0j)
    gamma_perp = (cos_t - root) / (cos_t + root)
    gamma_par = (eps * cos_t - root) / (eps * cos_t + root)
    return ReflectionCoeffs(complex(gamma_perp), complex(gamma_par))


def reflection_coeffs(m: Material, f_c: float, theta_i: float) -> ReflectionCoeffs:
    if m.is_pec:
        return fresnel_coeffs(None, theta_i)
    return fresnel_coeffs(complex_permittivity(m, f_c), theta_i)


def free_space_amplitude(d: float, lam: float) -> float:
    """Friis amplitude ``lambda / (4 pi d)`` between isotropic antennas."""
    if d <= 0:
        raise ValueError("distance must be positive (co-located endpoints)")
    if lam <= 0:
        raise ValueError("wavelength must be positive")
    return lam / (4.0 * math.pi * d)


def free_space_loss_db(d: float, lam: float) -> float:
    return -20.0 * math.log10(free_space_amplitude(d, lam))


def knife_edge_loss(nu: float) -> float:
    """Single knife-edge excess loss in dB for Fresnel parameter ``nu``."""
    if nu <= KNIFE_EDGE_NU_MIN:
        return 0.0
    x = nu - 0.1
    return 6.9 + 20.0 * math.log10(math.sqrt(x * x + 1.0) + x)


def fresnel_nu(h: float, d1: float, d2: float, lam: float) -> float:
    """Fresnel-Kirchhoff parameter for clearance ``h`` at distances ``d1``, ``d2``."""
    return h * math.sqrt(2.0 / lam * (1.0 / d1 + 1.0 / d2))


# -- material library ------------------------------------------------------

def _material_from_record(rec: Mapping) -> Material:
    return Material(
        name=str(rec["name"]),
        eps_r=float(rec.get("eps_r", 1.0)),
        sigma_coeff=float(rec.get("sigma_coeff", 0.0)),
        sigma_exp=float(rec.get("sigma_exp", 0.0)),
        is_pec=bool(rec.get("is_pec", False)),
        approximate=bool(rec.get("approximate", False)),
    )


def load_material_library(text: str | None = None) -> dict[str, Material]:
    """Parse a material library document (built-in one when ``text`` is None)."""
    if text is None:
        text = resources.files("v2xtwin").joinpath("data/materials.yaml").read_text()
    doc = yaml.safe_load(text) or {}
    return materials_from_records(doc.get("materials", []))


def materials_from_records(records: Iterable[Mapping]) -> dict[str, Material]:
    out = {}
    for rec in records:
        m = _material_from_record(rec)
        out[m.name] = m
    return out


def default_materials() -> dict[str, Material]:
    return load_material_library()
