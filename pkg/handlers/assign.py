import logging

import numpy as np

from core.losses import per_cell_cls_loss
from core.matching import assign_labels, ohem_refine, regression_targets
from handlers.common import (
    EXIT_OK, add_config_arguments, resolve_config, output_path, report_failure,
)
from utils.db import read_annotations, read_grid, read_loss_map, write_json

# Logger
logger = logging.getLogger(__name__)


def assignment_summary(scan_id, assignment, nodules, ohem):
    """Resumen serializable: conteos y celdas positivas (iz, iy, ix) por nódulo"""
    per_nodule = []
    for i, nodule in enumerate(nodules):
        cells = np.unravel_index(assignment.positive_cells(i), assignment.grid.dims)
        per_nodule.append({
            "id": nodule.id,
            "center": list(nodule.center.as_tuple()),
            "radius": nodule.radius,
            "positive_cells": [[int(a), int(b), int(c)] for a, b, c in zip(*cells)],
        })
    return {
        "scan_id": scan_id,
        "counts": assignment.counts(),
        "ohem": ohem,
        "nodules": per_nodule,
    }


def assign_command(args):
    """Asignación de etiquetas de un escáner"""
    try:
        config = resolve_config(args)
        by_scan = read_annotations(args.annotations)
        scan_id = args.scan if args.scan is not None else next(iter(by_scan), "")
        if args.scan is not None and scan_id not in by_scan:
            logger.info(f"Escáner {scan_id} sin anotaciones")
        nodules = by_scan.get(scan_id, [])

        grid_spec = config.grid
        loss = None
        if args.grid:
            _, prediction = read_grid(args.grid)
            grid_spec = prediction.spec
        assignment = assign_labels(grid_spec, nodules, config.K)

        if not args.no_ohem:
            if args.loss_map:
                loss = read_loss_map(args.loss_map, grid_spec.dims)
            elif args.grid:
                loss = per_cell_cls_loss(prediction.center_prob, assignment.labels, config.focal_params())
            else:
                # Sin mapa de pérdida todos los negativos empatan
                loss = np.zeros(grid_spec.dims)
            assignment = ohem_refine(assignment, loss, config.n)
        assignment = regression_targets(grid_spec, assignment, nodules)
    except ValueError as e:
        return report_failure("asignar etiquetas", e)

    summary = assignment_summary(scan_id, assignment, nodules, not args.no_ohem)
    summary["config"] = config.to_dict()
    summary["grid"] = {"dims": list(grid_spec.dims), "stride": grid_spec.stride}
    out = output_path(args.out, "assign.json")
    if not write_json(out, summary):
        return report_failure("guardar la asignación", OSError(out))

    counts = summary["counts"]
    print(f"✅ assign {scan_id or '(vacío)'}: |P|={counts['positive']} "
          f"|N|={counts['negative']} |I|={counts['ignored']} -> {out}")
    return EXIT_OK


def register_assign_command(subparsers):
    parser = subparsers.add_parser("assign", help="Asignación por puntos centrales de un escáner")
    parser.add_argument("--annotations", required=True, help="CSV de anotaciones")
    parser.add_argument("--scan", help="seriesuid del escáner (por defecto, el primero)")
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--loss-map", dest="loss_map", help="Pérdida por celda (.npy) para OHEM")
    source.add_argument("--grid", help="Rejilla de predicción para calcular la pérdida de OHEM")
    parser.add_argument("--no-ohem", dest="no_ohem", action="store_true", help="Omitir la minería de negativos")
    parser.add_argument("--out", help="Archivo JSON de salida")
    add_config_arguments(parser)
    parser.set_defaults(handler=assign_command)
