import logging

from core.eval_froc import ScanResult, froc
from handlers.common import (
    EXIT_OK, add_config_arguments, resolve_config, output_path, report_failure,
)
from utils.db import read_annotations, read_candidates, write_froc
from utils.helpers import format_fps, format_percentage

# Logger
logger = logging.getLogger(__name__)


def scan_results(candidates_by_scan, annotations_by_scan):
    """Un ScanResult por escáner presente en cualquiera de los dos archivos"""
    scan_ids = sorted(set(candidates_by_scan) | set(annotations_by_scan))
    return [
        ScanResult(scan_id, candidates_by_scan.get(scan_id, []), annotations_by_scan.get(scan_id, []))
        for scan_id in scan_ids
    ]


def froc_command(args):
    """Curva FROC de un archivo de candidatos"""
    try:
        config = resolve_config(args)
        candidates = read_candidates(args.candidates)
        annotations = read_annotations(args.annotations)
        results = scan_results(candidates, annotations)
        curve = froc(results)
    except ValueError as e:
        return report_failure("calcular FROC", e)

    out_dir = output_path(args.out, "froc")
    metadata = {
        "config": config.to_dict(),
        "scans": len(results),
        "annotations": sum(len(r.annotations) for r in results),
        "candidates": sum(len(r.candidates) for r in results),
    }
    if not write_froc(out_dir, curve, metadata):
        return report_failure("guardar FROC", OSError(out_dir))

    print(f"✅ FROC promedio: {curve.average:.4f}")
    print("   " + "  ".join(f"{format_fps(f)}: {format_percentage(s)}" for f, s in curve.points))
    return EXIT_OK


def register_froc_command(subparsers):
    parser = subparsers.add_parser("froc", help="Sensibilidad en siete puntos de FPs por escáner")
    parser.add_argument("--candidates", required=True, help="CSV de candidatos")
    parser.add_argument("--annotations", required=True, help="CSV de anotaciones")
    parser.add_argument("--out", help="Directorio de salida")
    add_config_arguments(parser)
    parser.set_defaults(handler=froc_command)
