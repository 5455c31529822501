import logging
from collections import OrderedDict

from core.decode_nms import candidates_from_grids, nms_siou
from handlers.common import (
    EXIT_OK, add_config_arguments, resolve_config, output_path, report_failure,
)
from utils.db import find_grid_files, read_grid, write_candidates, write_json

# Logger
logger = logging.getLogger(__name__)


def detect_scans(grids_by_scan, config):
    """
    Decodificación y NMS por escáner

    Args:
        grids_by_scan (dict): scan_id -> lista de PredictionGrid
        config (HarnessConfig): Configuración efectiva

    Returns:
        tuple: (filas (scan_id, Candidate), estadísticas por escáner)
    """
    rows, stats = [], OrderedDict()
    for scan_id in sorted(grids_by_scan):
        grids = grids_by_scan[scan_id]
        merged, decode_stats = candidates_from_grids(grids, config.top_n)
        kept = nms_siou(merged, config.nms)
        rows.extend((scan_id, c) for c in kept)
        stats[scan_id] = {
            "grids": len(grids),
            "pre_nms": len(merged),
            "post_nms": len(kept),
            "dropped": decode_stats.dropped,
        }
        logger.info(f"{scan_id}: {len(merged)} candidatos -> {len(kept)} tras NMS")
    return rows, stats


def detect_command(args):
    """Candidatos a partir de archivos de rejilla"""
    try:
        config = resolve_config(args)
        files = find_grid_files(args.grids)
        if not files:
            raise ValueError("No se encontraron archivos de rejilla")
        grids_by_scan = OrderedDict()
        for path in files:
            scan_id, grid = read_grid(path)
            grids_by_scan.setdefault(scan_id, []).append(grid)
        rows, stats = detect_scans(grids_by_scan, config)
    except (ValueError, OSError) as e:
        return report_failure("detectar candidatos", e)

    out = output_path(args.out, "candidates.csv")
    ok = write_candidates(out, rows)
    ok = write_json(out + ".meta.json", {"config": config.to_dict(), "scans": stats}) and ok
    if not ok:
        return report_failure("guardar candidatos", OSError(out))

    print(f"✅ detect: {len(rows)} candidatos en {len(stats)} escáneres -> {out}")
    return EXIT_OK


def register_detect_command(subparsers):
    parser = subparsers.add_parser("detect", help="Decodificación, fusión de niveles y NMS")
    parser.add_argument("grids", nargs="+", help="Archivos .grid o directorios que los contienen")
    parser.add_argument("--out", help="CSV de candidatos")
    add_config_arguments(parser)
    parser.set_defaults(handler=detect_command)
