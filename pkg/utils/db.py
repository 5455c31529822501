import csv
import io
import json
import logging
import os
import tempfile
from collections import OrderedDict

import numpy as np
import pandas as pd

from core.decode_nms import Candidate, PredictionGrid, GridError
from core.matching import GridSpec, NoduleAnnotation, MatchingError
from core.sphere_geometry import Point3, Sphere, GeometryError
from utils.helpers import scan_id_from_filename
from utils.validators import (
    ANNOTATION_COLUMNS, CANDIDATE_COLUMNS,
    validate_header, annotation_row_errors, candidate_row_errors,
)

# Configuración de logging
logger = logging.getLogger(__name__)

# Prefijo de los archivos de rejilla
GRID_MAGIC = b"SCPMGRID1\n"
GRID_DTYPE = "f32le"
GRID_EXTENSION = ".grid"


class FileFormatError(ValueError):
    """Archivo de entrada mal formado (con ruta y, si aplica, número de línea)"""

    def __init__(self, path, message, line=None):
        self.path = str(path)
        self.line = line
        location = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{location}: {message}")


def _write_atomic(file_path, content):
    """
    Escribe el archivo completo en un temporal del mismo directorio y lo renombra

    Args:
        file_path (str): Ruta destino
        content (str | bytes): Contenido completo
    """
    directory = os.path.dirname(os.path.abspath(file_path))
    os.makedirs(directory, exist_ok=True)
    data = content.encode("utf-8") if isinstance(content, str) else content
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(file_path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp_path, file_path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def save_to_csv(file_path, rows, fieldnames):
    """
    Guarda una tabla completa en un archivo CSV

    Args:
        file_path (str): Ruta del archivo
        rows (list): Lista de diccionarios
        fieldnames (list): Columnas en orden

    Returns:
        bool: True si se guardó correctamente, False en caso contrario
    """
    try:
        df = pd.DataFrame(rows, columns=fieldnames)
        _write_atomic(file_path, df.to_csv(index=False, lineterminator="\n"))
        return True
    except Exception as e:
        logger.error(f"Error al guardar en CSV {file_path}: {e}")
        return False


def write_json(file_path, data):
    """
    Guarda un diccionario como JSON con claves ordenadas

    Returns:
        bool: True si se guardó correctamente, False en caso contrario
    """
    try:
        _write_atomic(file_path, json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False) + "\n")
        return True
    except Exception as e:
        logger.error(f"Error al guardar JSON {file_path}: {e}")
        return False


# ---------------------------------------------------------------------------
# Anotaciones (estilo LUNA16)
# ---------------------------------------------------------------------------

def read_annotations(file_path):
    """
    Lee el CSV de anotaciones

    El diámetro se convierte a radio al leer. Los identificadores de nódulo
    son '<scan>-<i>' con i el orden de aparición dentro del escáner.

    Args:
        file_path (str): Ruta del CSV

    Returns:
        OrderedDict: scan_id -> lista de NoduleAnnotation
    """
    by_scan = OrderedDict()
    try:
        f = open(file_path, "r", newline="", encoding="utf-8")
    except OSError as e:
        raise FileFormatError(file_path, f"no se pudo abrir: {e}")

    with f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            logger.info(f"Archivo de anotaciones vacío: {file_path}")
            return by_scan
        missing = validate_header(reader.fieldnames, ANNOTATION_COLUMNS)
        if missing:
            raise FileFormatError(file_path, f"faltan columnas {missing}", line=1)

        for row in reader:
            errors = annotation_row_errors(row)
            if errors:
                raise FileFormatError(file_path, "; ".join(errors), line=reader.line_num)
            scan_id = row["seriesuid"].strip()
            nodules = by_scan.setdefault(scan_id, [])
            try:
                nodules.append(NoduleAnnotation(
                    Point3(float(row["coordX"]), float(row["coordY"]), float(row["coordZ"])),
                    float(row["diameter_mm"]) / 2.0,
                    f"{scan_id}-{len(nodules)}",
                ))
            except GeometryError as e:
                raise FileFormatError(file_path, str(e), line=reader.line_num)

    logger.debug(f"{sum(len(v) for v in by_scan.values())} nódulos en {len(by_scan)} escáneres")
    return by_scan


def write_annotations(file_path, by_scan):
    """
    Guarda anotaciones (scan_id -> lista de NoduleAnnotation)

    Returns:
        bool: True si se guardó correctamente, False en caso contrario
    """
    try:
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=ANNOTATION_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for scan_id, nodules in by_scan.items():
            for nodule in nodules:
                writer.writerow({
                    "seriesuid": scan_id,
                    "coordX": repr(float(nodule.center.x)),
                    "coordY": repr(float(nodule.center.y)),
                    "coordZ": repr(float(nodule.center.z)),
                    "diameter_mm": repr(2.0 * float(nodule.radius)),
                })
        _write_atomic(file_path, buffer.getvalue())
        return True
    except Exception as e:
        logger.error(f"Error al guardar anotaciones {file_path}: {e}")
        return False


# ---------------------------------------------------------------------------
# Candidatos
# ---------------------------------------------------------------------------

def write_candidates(file_path, rows):
    """
    Guarda candidatos en el orden recibido

    Args:
        file_path (str): Ruta del CSV
        rows (list): Pares (scan_id, Candidate)

    Returns:
        bool: True si se guardó correctamente, False en caso contrario
    """
    records = []
    for scan_id, candidate in rows:
        center = candidate.sphere.center
        records.append({
            "seriesuid": scan_id,
            "coordX": center.x,
            "coordY": center.y,
            "coordZ": center.z,
            "radius": candidate.sphere.radius,
            "probability": candidate.score,
        })
    return save_to_csv(file_path, records, CANDIDATE_COLUMNS)


def read_candidates(file_path):
    """
    Lee el CSV de candidatos

    Returns:
        OrderedDict: scan_id -> lista de Candidate (en el orden del archivo)
    """
    try:
        # Filas en blanco conservadas: el índice sigue a la línea del archivo
        df = pd.read_csv(file_path, dtype=str, keep_default_na=False, skip_blank_lines=False)
    except pd.errors.EmptyDataError:
        logger.info(f"Archivo de candidatos vacío: {file_path}")
        return OrderedDict()
    except (OSError, pd.errors.ParserError) as e:
        raise FileFormatError(file_path, f"no se pudo leer: {e}")

    missing = validate_header(list(df.columns), CANDIDATE_COLUMNS)
    if missing:
        raise FileFormatError(file_path, f"faltan columnas {missing}", line=1)

    by_scan = OrderedDict()
    for index, row in enumerate(df.to_dict("records")):
        line = index + 2
        if all(pd.isna(v) or not str(v).strip() for v in row.values()):
            continue
        errors = candidate_row_errors(row)
        if errors:
            raise FileFormatError(file_path, "; ".join(errors), line=line)
        scan_id = row["seriesuid"].strip()
        try:
            sphere = Sphere.of(float(row["coordX"]), float(row["coordY"]),
                               float(row["coordZ"]), float(row["radius"]))
            candidate = Candidate(sphere, float(row["probability"]), cell=line)
        except (GeometryError, GridError) as e:
            raise FileFormatError(file_path, str(e), line=line)
        by_scan.setdefault(scan_id, []).append(candidate)
    return by_scan


# ---------------------------------------------------------------------------
# Rejillas de predicción
# ---------------------------------------------------------------------------

def write_grid(file_path, grid: PredictionGrid, scan_id=None):
    """
    Guarda una rejilla: magic, cabecera JSON de una línea y float32 little-endian

    Los mapas van en orden M_C, M_R, M_O (3 canales), cada uno en orden z-major.

    Returns:
        bool: True si se guardó correctamente, False en caso contrario
    """
    try:
        header = {
            "dims": list(grid.spec.dims),
            "stride": grid.spec.stride,
            "level": grid.level,
            "dtype": GRID_DTYPE,
        }
        if scan_id is not None:
            header["scan_id"] = scan_id
        payload = np.concatenate([
            grid.center_prob.ravel(),
            grid.radius.ravel(),
            grid.offset.ravel(),
        ]).astype("<f4")
        content = GRID_MAGIC + json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + payload.tobytes()
        _write_atomic(file_path, content)
        return True
    except Exception as e:
        logger.error(f"Error al guardar rejilla {file_path}: {e}")
        return False


def read_grid(file_path):
    """
    Lee un archivo de rejilla

    Returns:
        tuple: (scan_id, PredictionGrid)
    """
    try:
        with open(file_path, "rb") as f:
            content = f.read()
    except OSError as e:
        raise FileFormatError(file_path, f"no se pudo abrir: {e}")

    if not content.startswith(GRID_MAGIC):
        raise FileFormatError(file_path, "magic SCPMGRID1 ausente")
    end = content.find(b"\n", len(GRID_MAGIC))
    if end < 0:
        raise FileFormatError(file_path, "cabecera sin terminar")
    try:
        header = json.loads(content[len(GRID_MAGIC):end].decode("utf-8"))
        spec = GridSpec(tuple(header["dims"]), header["stride"])
        level = int(header.get("level", 1))
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, MatchingError) as e:
        raise FileFormatError(file_path, f"cabecera inválida: {e}")
    if header.get("dtype", GRID_DTYPE) != GRID_DTYPE:
        raise FileFormatError(file_path, f"dtype no soportado: {header.get('dtype')}")

    payload = content[end + 1:]
    expected = 5 * spec.size * 4
    if len(payload) != expected:
        raise FileFormatError(
            file_path, f"tamaño de datos {len(payload)} no coincide con dims {list(spec.dims)} ({expected} bytes)"
        )
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    n = spec.size
    try:
        grid = PredictionGrid(
            spec,
            values[:n].reshape(spec.dims),
            values[n:2 * n].reshape(spec.dims),
            values[2 * n:].reshape((3,) + spec.dims),
            level,
        )
    except GridError as e:
        raise FileFormatError(file_path, str(e))

    scan_id = header.get("scan_id") or scan_id_from_filename(os.path.basename(file_path))
    return str(scan_id), grid


def find_grid_files(paths):
    """
    Expande directorios a sus archivos .grid

    Returns:
        list: Rutas de archivo ordenadas dentro de cada directorio
    """
    files = []
    for path in paths:
        if os.path.isdir(path):
            names = sorted(n for n in os.listdir(path) if n.endswith(GRID_EXTENSION))
            files.extend(os.path.join(path, n) for n in names)
        else:
            files.append(path)
    return files


def read_loss_map(file_path, dims):
    """Mapa de pérdida por celda (.npy) con forma dims"""
    try:
        loss = np.load(file_path, allow_pickle=False)
    except (OSError, ValueError) as e:
        raise FileFormatError(file_path, f"no se pudo leer el mapa de pérdida: {e}")
    if loss.shape != tuple(dims):
        raise FileFormatError(file_path, f"forma {loss.shape} distinta de la rejilla {tuple(dims)}")
    return loss.astype(np.float64)


# ---------------------------------------------------------------------------
# FROC
# ---------------------------------------------------------------------------

def write_froc(out_dir, curve, metadata=None):
    """
    Guarda froc.csv (fps_per_scan, sensitivity) y froc.json

    Returns:
        bool: True si ambos archivos se guardaron, False en caso contrario
    """
    rows = [{"fps_per_scan": f, "sensitivity": s} for f, s in curve.points]
    ok = save_to_csv(os.path.join(out_dir, "froc.csv"), rows, ["fps_per_scan", "sensitivity"])
    data = dict(metadata or {})
    data["points"] = [{"fps_per_scan": f, "sensitivity": s} for f, s in curve.points]
    data["average"] = curve.average
    return write_json(os.path.join(out_dir, "froc.json"), data) and ok
