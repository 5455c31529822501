import logging
import math
from dataclasses import dataclass

import numpy as np

# Logger
logger = logging.getLogger(__name__)

# Regímenes de solapamiento
DISJOINT = "disjoint"
INTERSECTING = "intersecting"
CONTAINED = "contained"

# Muestras por bloque en el estimador Monte-Carlo (controla memoria)
_MC_CHUNK = 1_000_000


class GeometryError(ValueError):
    """Punto o esfera con valores inválidos"""


@dataclass(frozen=True)
class Point3:
    """Coordenadas en vóxeles del mundo (1 mm isotrópico)"""
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise GeometryError(f"Coordenadas no finitas: ({self.x}, {self.y}, {self.z})")

    def as_tuple(self):
        return (self.x, self.y, self.z)


@dataclass(frozen=True)
class Sphere:
    """Esfera envolvente: centro + radio, ambos en vóxeles del mundo"""
    center: Point3
    radius: float

    def __post_init__(self):
        if not math.isfinite(self.radius) or self.radius <= 0:
            raise GeometryError(f"Radio inválido: {self.radius}")

    @classmethod
    def of(cls, x, y, z, radius):
        return cls(Point3(float(x), float(y), float(z)), float(radius))

    @property
    def volume(self):
        return 4.0 * math.pi * self.radius ** 3 / 3.0

    def scaled(self, s):
        c = self.center
        return Sphere.of(c.x * s, c.y * s, c.z * s, self.radius * s)


@dataclass(frozen=True)
class OverlapGeometry:
    """Ángulos centrales y alturas de casquete de dos esferas"""
    d_ab: float
    cos_phi_a: float
    cos_phi_b: float
    cos_phi_ab: float
    h1: float
    h2: float
    regime: str


def _clamp(value, low=-1.0, high=1.0):
    return max(low, min(high, value))


def regime_of(d, ra, rb):
    """
    Clasifica el par según distancia y radios

    La tangencia (d = ra + rb) cuenta como disjunta; d = 0 con radios
    iguales cuenta como contenida.
    """
    if d >= ra + rb:
        return DISJOINT
    if d + min(ra, rb) <= max(ra, rb):
        return CONTAINED
    return INTERSECTING


def center_distance(a: Sphere, b: Sphere) -> float:
    """Distancia euclídea entre centros"""
    return math.dist(a.center.as_tuple(), b.center.as_tuple())


def _cosines(d, ra, rb):
    # Sin clamping: solo válido en régimen de intersección (d > 0)
    cos_a = (ra * ra + d * d - rb * rb) / (2.0 * ra * d)
    cos_b = (rb * rb + d * d - ra * ra) / (2.0 * rb * d)
    return cos_a, cos_b


def cos_intersection_angle(d, ra, rb):
    """Coseno del ángulo de intersección, limitado a [-1, 1]"""
    return _clamp((rb * rb + ra * ra - d * d) / (2.0 * ra * rb))


def overlap_geometry(a: Sphere, b: Sphere) -> OverlapGeometry:
    """
    Calcula los cosenos de los ángulos centrales y las alturas de casquete

    Fuera del régimen de intersección los cosenos centrales valen 1 y las
    alturas 0; cos_phi_ab se calcula siempre (limitado a [-1, 1]).

    Args:
        a (Sphere): Esfera predicha
        b (Sphere): Esfera de referencia

    Returns:
        OverlapGeometry: Geometría del par
    """
    d = center_distance(a, b)
    ra, rb = a.radius, b.radius
    regime = regime_of(d, ra, rb)
    cos_ab = cos_intersection_angle(d, ra, rb)
    if regime != INTERSECTING:
        return OverlapGeometry(d, 1.0, 1.0, cos_ab, 0.0, 0.0, regime)

    cos_a, cos_b = _cosines(d, ra, rb)
    cos_a, cos_b = _clamp(cos_a), _clamp(cos_b)
    h1 = rb * (1.0 - cos_b)
    h2 = ra * (1.0 - cos_a)
    return OverlapGeometry(d, cos_a, cos_b, cos_ab, h1, h2, regime)


def _cap_volume(r, h):
    return math.pi * r * h * h - math.pi * h ** 3 / 3.0


def lens_volume(d, ra, rb):
    """Volumen de intersección a partir de (d, ra, rb)"""
    # Orden canónico de radios: resultado idéntico bit a bit al intercambiar
    r1, r2 = (ra, rb) if ra <= rb else (rb, ra)
    regime = regime_of(d, r1, r2)
    if regime == DISJOINT:
        return 0.0
    if regime == CONTAINED:
        return 4.0 * math.pi * r1 ** 3 / 3.0
    cos_1, cos_2 = _cosines(d, r1, r2)
    h_1 = r1 * (1.0 - _clamp(cos_1))
    h_2 = r2 * (1.0 - _clamp(cos_2))
    return _cap_volume(r1, h_1) + _cap_volume(r2, h_2)


def intersection_volume(a: Sphere, b: Sphere) -> float:
    """Volumen |Sa ∩ Sb| (0 si son disjuntas, la menor si hay contención)"""
    return lens_volume(center_distance(a, b), a.radius, b.radius)


def union_volume(a: Sphere, b: Sphere) -> float:
    """Volumen |Sa ∪ Sb| = Va + Vb - |Sa ∩ Sb|"""
    return 4.0 * math.pi * (a.radius ** 3 + b.radius ** 3) / 3.0 - intersection_volume(a, b)


def siou_from(d, ra, rb):
    inter = lens_volume(d, ra, rb)
    union = 4.0 * math.pi * (ra ** 3 + rb ** 3) / 3.0 - inter
    return inter / union


def siou(a: Sphere, b: Sphere) -> float:
    """IoU de esferas, en [0, 1]"""
    return siou_from(center_distance(a, b), a.radius, b.radius)


def distance_radius_ratio(a: Sphere, b: Sphere) -> float:
    """R_DR = d / (d + ra + rb), en [0, 1)"""
    d = center_distance(a, b)
    return d / (d + (a.radius + b.radius))


def angle_from(d, ra, rb):
    if d > ra + rb:
        return 0.0
    return math.acos(cos_intersection_angle(d, ra, rb)) / math.pi


def angle_score(a: Sphere, b: Sphere) -> float:
    """Puntaje de ángulo de intersección η, en [0, 1]"""
    return angle_from(center_distance(a, b), a.radius, b.radius)


def mc_intersection_volume(a: Sphere, b: Sphere, samples: int, seed: int) -> float:
    """
    Estima |Sa ∩ Sb| por Monte-Carlo

    Muestrea uniformemente el cubo que envuelve a la esfera menor y cuenta
    los puntos que caen dentro de ambas esferas. Cada llamada usa su propio
    generador, por lo que es determinista dado el seed.

    Args:
        a (Sphere): Primera esfera
        b (Sphere): Segunda esfera
        samples (int): Número de muestras (>= 1)
        seed (int): Semilla del generador

    Returns:
        float: Volumen estimado
    """
    if samples < 1:
        raise GeometryError(f"Número de muestras inválido: {samples}")
    if center_distance(a, b) >= a.radius + b.radius:
        return 0.0

    small, other = (a, b) if a.radius <= b.radius else (b, a)
    rng = np.random.default_rng(seed)
    c_small = np.array(small.center.as_tuple())
    c_other = np.array(other.center.as_tuple())
    r_small2 = small.radius ** 2
    r_other2 = other.radius ** 2

    hits = 0
    remaining = samples
    while remaining > 0:
        n = min(remaining, _MC_CHUNK)
        pts = rng.uniform(-small.radius, small.radius, size=(n, 3)) + c_small
        in_small = np.sum((pts - c_small) ** 2, axis=1) <= r_small2
        in_other = np.sum((pts - c_other) ** 2, axis=1) <= r_other2
        hits += int(np.count_nonzero(in_small & in_other))
        remaining -= n

    box_volume = (2.0 * small.radius) ** 3
    return box_volume * hits / samples
