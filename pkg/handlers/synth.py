import logging
import math
import os
from collections import OrderedDict
from dataclasses import dataclass, asdict

import numpy as np

from core.decode_nms import PredictionGrid
from core.matching import GridSpec, NoduleAnnotation, POSITIVE, assign_labels, regression_targets
from core.sphere_geometry import Point3
from handlers.common import (
    EXIT_OK, add_config_arguments, resolve_config, output_path, report_failure,
)
from utils.db import write_annotations, write_grid, write_json

# Logger
logger = logging.getLogger(__name__)

# Coordenadas y radios se cuantizan a esta fracción de vóxel (exacta en float32)
LATTICE = 1.0 / 32.0

# Intentos por nódulo o pico espurio antes de declarar el empaquetado inviable
MAX_PLACEMENT_TRIES = 1000

# Probabilidad de los picos espurios
CLUTTER_PROB_RANGE = (0.2, 0.9)


class InfeasiblePackingError(ValueError):
    """No caben los nódulos pedidos en el volumen"""


@dataclass
class SyntheticScanSpec:
    """Parámetros de los escáneres sintéticos (longitudes en vóxeles del mundo)"""
    volume: tuple
    nodules: tuple = (1, 3)
    radius: tuple = (3.0, 8.0)
    noise: float = 0.0
    clutter: int = 0

    def __post_init__(self):
        self.volume = tuple(float(v) for v in self.volume)
        self.nodules = tuple(int(v) for v in self.nodules)
        self.radius = tuple(float(v) for v in self.radius)
        if len(self.volume) != 3 or any(not v > 0 for v in self.volume):
            raise ValueError(f"Volumen inválido: {self.volume}")
        if self.nodules[0] < 0 or self.nodules[0] > self.nodules[1]:
            raise ValueError(f"Rango de nódulos inválido: {self.nodules}")
        if not 0 < self.radius[0] <= self.radius[1]:
            raise ValueError(f"Rango de radios inválido: {self.radius}")
        if not 0.0 <= self.noise < 1.0:
            raise ValueError(f"El ruido debe estar en [0, 1): {self.noise}")
        if self.clutter < 0:
            raise ValueError(f"clutter debe ser >= 0: {self.clutter}")


def _quantize(value):
    return round(value / LATTICE) * LATTICE


def plant_nodules(spec: SyntheticScanSpec, stride, rng, scan_id):
    """
    Nódulos aleatorios sin solaparse

    Dos nódulos quedan separados al menos r1 + r2 + 2R, de modo que ninguno
    suprime al otro en NMS.

    Raises:
        InfeasiblePackingError: Si un nódulo no cabe tras MAX_PLACEMENT_TRIES intentos
    """
    depth, height, width = spec.volume
    count = int(rng.integers(spec.nodules[0], spec.nodules[1] + 1))
    placed = []
    for i in range(count):
        for _ in range(MAX_PLACEMENT_TRIES):
            r = max(_quantize(rng.uniform(*spec.radius)), LATTICE)
            if 2 * r > min(spec.volume):
                continue
            x = _quantize(rng.uniform(r, width - r))
            y = _quantize(rng.uniform(r, height - r))
            z = _quantize(rng.uniform(r, depth - r))
            if all(math.dist((x, y, z), n.center.as_tuple()) >= r + n.radius + 2 * stride for n in placed):
                placed.append(NoduleAnnotation(Point3(x, y, z), r, f"{scan_id}-{i}"))
                break
        else:
            raise InfeasiblePackingError(
                f"{scan_id}: no caben {count} nódulos en {spec.volume} tras {MAX_PLACEMENT_TRIES} intentos"
            )
    return placed


def oracle_grid(grid_spec: GridSpec, nodules, K, noise, rng, level=1):
    """
    Rejilla con objetivos exactos en las celdas positivas

    M_C vale 1 en los positivos y 0 en el resto antes del ruido uniforme
    aditivo (recortado a [0, 1]); el radio del fondo es 0.
    """
    assignment = regression_targets(grid_spec, assign_labels(grid_spec, nodules, K), nodules)
    positive = assignment.labels == POSITIVE
    prob = positive.astype(np.float64)
    if noise > 0:
        prob = np.clip(prob + noise * rng.uniform(-1.0, 1.0, size=grid_spec.dims), 0.0, 1.0)
    radius = np.where(positive, assignment.radius_target, 0.0)
    offset = np.where(positive[np.newaxis], assignment.offset_target, 0.0)
    return PredictionGrid(grid_spec, prob, radius, offset, level)


def add_clutter(grid: PredictionGrid, nodules, spec: SyntheticScanSpec, rng):
    """
    Picos espurios lejos de los nódulos, con offset cero

    Cada pico queda a más de r + r_pico + 2R de todo nódulo y separado de
    los demás picos, así que termina como falso positivo tras NMS.
    """
    stride = float(grid.spec.stride)
    placed = []
    for _ in range(spec.clutter):
        for _ in range(MAX_PLACEMENT_TRIES):
            cell = tuple(int(rng.integers(0, n)) for n in grid.spec.dims)
            iz, iy, ix = cell
            center = ((ix + 0.5) * stride, (iy + 0.5) * stride, (iz + 0.5) * stride)
            r = max(_quantize(rng.uniform(*spec.radius)), LATTICE)
            if grid.radius[cell] > 0:
                continue
            if any(math.dist(center, n.center.as_tuple()) <= r + n.radius + 2 * stride for n in nodules):
                continue
            if any(math.dist(center, c) <= r + rc for c, rc in placed):
                continue
            grid.center_prob[cell] = rng.uniform(*CLUTTER_PROB_RANGE)
            grid.radius[cell] = r / stride
            placed.append((center, r))
            break
        else:
            raise InfeasiblePackingError(f"No hay sitio para {spec.clutter} picos espurios")
    return len(placed)


def synth_command(args):
    """Genera anotaciones y rejillas oráculo deterministas"""
    try:
        config = resolve_config(args)
        grid_spec = config.grid
        extent = tuple(float(n * grid_spec.stride) for n in grid_spec.dims)
        spec = SyntheticScanSpec(
            volume=tuple(args.volume) if args.volume else extent,
            nodules=tuple(args.nodules),
            radius=tuple(args.radius),
            noise=args.noise,
            clutter=args.clutter,
        )
        if any(v > e for v, e in zip(spec.volume, extent)):
            raise ValueError(f"El volumen {spec.volume} excede la rejilla {extent}")
        if args.count < 1:
            raise ValueError(f"--count debe ser >= 1: {args.count}")
    except ValueError as e:
        return report_failure("preparar synth", e)

    out_dir = output_path(args.out, "synth")
    grids_dir = os.path.join(out_dir, "grids")
    rng = np.random.default_rng(config.seed)
    annotations = OrderedDict()
    scans = []
    try:
        for index in range(args.count):
            scan_id = f"scan{index:03d}"
            nodules = plant_nodules(spec, grid_spec.stride, rng, scan_id)
            annotations[scan_id] = nodules

            level1 = oracle_grid(grid_spec, nodules, config.K, spec.noise, rng, level=1)
            clutter = add_clutter(level1, nodules, spec, rng)
            grids = [level1]
            if args.levels == 2:
                coarse = GridSpec(tuple((n + 1) // 2 for n in grid_spec.dims), 2 * grid_spec.stride)
                grids.append(oracle_grid(coarse, nodules, config.K, spec.noise, rng, level=2))

            for grid in grids:
                path = os.path.join(grids_dir, f"{scan_id}.L{grid.level}.grid")
                if not write_grid(path, grid, scan_id):
                    raise OSError(f"No se pudo escribir {path}")
            scans.append({"scan_id": scan_id, "nodules": len(nodules), "clutter": clutter})
            logger.info(f"{scan_id}: {len(nodules)} nódulos, {clutter} picos espurios")
    except (ValueError, OSError) as e:
        return report_failure("generar escáneres sintéticos", e)

    ok = write_annotations(os.path.join(out_dir, "annotations.csv"), annotations)
    spec_data = asdict(spec)
    spec_data.update(count=args.count, levels=args.levels)
    ok = write_json(os.path.join(out_dir, "synth.json"), {
        "config": config.to_dict(),
        "spec": {k: list(v) if isinstance(v, tuple) else v for k, v in spec_data.items()},
        "scans": scans,
    }) and ok
    if not ok:
        return report_failure("guardar escáneres sintéticos", OSError(out_dir))

    total = sum(s["nodules"] for s in scans)
    print(f"✅ synth: {args.count} escáneres, {total} nódulos, resultados en {out_dir}")
    return EXIT_OK


def register_synth_command(subparsers):
    parser = subparsers.add_parser("synth", help="Genera escáneres sintéticos con rejillas oráculo")
    parser.add_argument("--count", type=int, default=20, help="Número de escáneres")
    parser.add_argument("--volume", type=float, nargs=3, metavar=("D", "H", "W"),
                        help="Volumen en vóxeles (por defecto, la extensión de la rejilla)")
    parser.add_argument("--nodules", type=int, nargs=2, metavar=("MIN", "MAX"), default=[1, 3])
    parser.add_argument("--radius", type=float, nargs=2, metavar=("MIN", "MAX"), default=[3.0, 8.0])
    parser.add_argument("--noise", type=float, default=0.0, help="Amplitud del ruido de probabilidad")
    parser.add_argument("--clutter", type=int, default=0, help="Picos espurios por escáner")
    parser.add_argument("--levels", type=int, choices=[1, 2], default=1, help="Niveles de salida")
    parser.add_argument("--out", help="Directorio de salida")
    add_config_arguments(parser)
    parser.set_defaults(handler=synth_command)
