"""### Input/Output tools

Here are tools to read and write the files patchsegpy works with:

- Volume containers: a `<name>.mvol.json` header plus a raw little-endian
  data file, voxel (z, y, x) at offset z*H*W + y*W + x.
- Checkpoints: the magic line `P3D2D-CKPT-v1`, a text manifest, then raw
  little-endian float32 tensors.
- Portable pixmaps (binary P6) for overlays.
- JSON and JSON-lines files for reports and training logs.
"""
__all__ = [
    'HEADER_SUFFIX',
    'CHECKPOINT_MAGIC',
    'write_container',
    'read_container',
    'find_containers',
    'write_checkpoint',
    'read_checkpoint',
    'write_ppm',
    'write_json',
    'read_json',
    'write_json_lines',
    'read_json_lines',
    ]

import json
import logging
from pathlib import Path
import numpy as np
from .tools import FormatError, _shape_str

LOGGER = logging.getLogger(__name__)

HEADER_SUFFIX = '.mvol.json'
CHECKPOINT_MAGIC = 'P3D2D-CKPT-v1'

# Container dtype names and their on-disk numpy types
_CONTAINER_DTYPES = {'f32le': np.dtype('<f4'), 'u8': np.dtype('u1')}
_HEADER_FIELDS = ('dims', 'spacing_mm', 'dtype', 'role', 'data_file')


def write_container(header_path, array, spacing_mm, role, dtype='f32le',
                    **extra):
    """Writes one scan (or label map) as header + raw data.

    Args:
        header_path (str/pathlib.Path): Header file, should end in
                                        '.mvol.json'. The raw file is written
                                        next to it with a '.raw' suffix.
        array (np.ndarray): 3D array D x H x W.
        spacing_mm (tuple): Voxel spacing (sz, sy, sx) in millimeters.
        role (str): 'modality:FLAIR' etc. or 'labels'.
        dtype (str): (default: 'f32le') 'f32le' or 'u8'.
        **extra: Further header fields (e.g. subject_id).

    Returns:
        (pathlib.Path): The header path.

    Raises:
        FormatError: For an unknown dtype or a non-3D array.
    """
    header_path = Path(header_path)
    if dtype not in _CONTAINER_DTYPES:
        raise FormatError(f'dtype: unknown container dtype {dtype!r}')
    array = np.asarray(array)
    if array.ndim != 3:
        raise FormatError('dims: containers hold 3D arrays, got '
                          + _shape_str(array.shape))
    name = header_path.name
    if name.endswith(HEADER_SUFFIX):
        name = name[:-len(HEADER_SUFFIX)]
    data_file = name + '.raw'
    header = {
        'dims': [int(extent) for extent in array.shape],
        'spacing_mm': [float(value) for value in spacing_mm],
        'dtype': dtype,
        'role': role,
        'data_file': data_file,
        }
    header.update(extra)
    header_path.parent.mkdir(parents=True, exist_ok=True)
    (header_path.parent / data_file).write_bytes(
        np.ascontiguousarray(array, dtype=_CONTAINER_DTYPES[dtype]).tobytes())
    write_json(header_path, header)
    LOGGER.debug('Wrote %s (%s, %s)', header_path, role,
                 _shape_str(array.shape))
    return header_path


def _header_triple(header_path, header, key, kind):
    """Three positive numbers of type `kind` from header field `key`."""
    values = header[key]
    try:
        parsed = tuple(kind(value) for value in values)
    except (TypeError, ValueError):
        parsed = ()
    if isinstance(values, str) or len(parsed) != 3 \
            or not all(value > 0 for value in parsed):
        raise FormatError(f'{header_path}: field {key}={values!r} is not '
                          'three positive numbers')
    return parsed


def read_container(header_path):
    """Reads a volume container.

    Args:
        header_path (str/pathlib.Path): The '.mvol.json' header.

    Returns:
        tuple: (np.ndarray D x H x W, header dict). Float data comes back as
               float32, labels as uint8.

    Raises:
        FormatError: Missing or malformed header fields, or a raw file whose
                     size does not match the declared dims. The message names
                     the field.

    Examples:
        ```python
        flair, header = read_container('subject_000/FLAIR.mvol.json')
        print(header['spacing_mm'])
        ```
    """
    header_path = Path(header_path)
    try:
        header = read_json(header_path)
    except (OSError, ValueError) as error:
        raise FormatError(f'{header_path}: unreadable header ({error})')
    for key in _HEADER_FIELDS:
        if key not in header:
            raise FormatError(f'{header_path}: missing field {key!r}')
    dims = _header_triple(header_path, header, 'dims', int)
    header['spacing_mm'] = list(_header_triple(header_path, header,
                                                'spacing_mm', float))
    if header['dtype'] not in _CONTAINER_DTYPES:
        raise FormatError(f'{header_path}: field dtype={header["dtype"]!r} '
                          f'is not one of {sorted(_CONTAINER_DTYPES)}')

    dtype = _CONTAINER_DTYPES[header['dtype']]
    data_path = header_path.parent / header['data_file']
    try:
        raw = data_path.read_bytes()
    except OSError as error:
        raise FormatError(f'{header_path}: field data_file, cannot read '
                          f'{data_path} ({error.strerror})')
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) != expected:
        raise FormatError(f'{header_path}: field data_file holds {len(raw)} '
                          f'bytes, dims {_shape_str(dims)} need {expected}')
    array = np.frombuffer(raw, dtype=dtype).reshape(dims)
    return array.astype(dtype.newbyteorder('='), copy=True), header


def find_containers(directory):
    """Returns {role: header path} for the containers in a directory.

    Raises:
        FormatError: If two containers claim the same role.
    """
    directory = Path(directory)
    found = {}
    for header_path in sorted(directory.glob('*' + HEADER_SUFFIX)):
        try:
            role = read_json(header_path).get('role')
        except (OSError, ValueError) as error:
            raise FormatError(f'{header_path}: unreadable header ({error})')
        if role in found:
            raise FormatError(f'{header_path}: field role={role!r} also used '
                              f'by {found[role]}')
        found[role] = header_path
    return found


# Checkpoints

def _parse_shape(text):
    if text in ('', 'scalar'):
        return ()
    return tuple(int(extent) for extent in text.split('x'))


def write_checkpoint(path, arrays, meta):
    """Writes named arrays and key-value metadata in the checkpoint format.

    Args:
        path (str/pathlib.Path): Output file.
        arrays (dict): name -> np.ndarray, stored as '<f4' in insertion order.
        meta (dict): key -> JSON-serializable value.
    """
    lines = []
    for key, value in meta.items():
        lines.append(f'meta.{key}={json.dumps(value)}')
    offset = 0
    blobs = []
    for name, array in arrays.items():
        blob = np.ascontiguousarray(array, dtype='<f4').tobytes()
        lines.append(f'tensor.{name}={_shape_str(np.shape(array))}@{offset}')
        blobs.append(blob)
        offset += len(blob)
    manifest = ('\n'.join(lines) + '\n').encode('utf-8')

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as checkpoint:
        checkpoint.write(f'{CHECKPOINT_MAGIC}\n'.encode('ascii'))
        checkpoint.write(f'manifest_bytes={len(manifest)}\n'.encode('ascii'))
        checkpoint.write(manifest)
        for blob in blobs:
            checkpoint.write(blob)


def read_checkpoint(path):
    """Reads a checkpoint written by #write_checkpoint().

    Returns:
        tuple: (dict name -> float32 array, dict key -> value)

    Raises:
        FormatError: Missing file, wrong magic, malformed manifest or data
                     shorter than the manifest declares. The message names
                     the offending field.
    """
    path = Path(path)
    try:
        content = path.read_bytes()
    except OSError as error:
        raise FormatError(f'{path}: checkpoint cannot be read '
                          f'({error.strerror})')

    magic, _, rest = content.partition(b'\n')
    if magic.decode('ascii', 'replace') != CHECKPOINT_MAGIC:
        raise FormatError(f'{path}: field magic is {magic[:32]!r}, expected '
                          f'{CHECKPOINT_MAGIC!r}')
    size_line, _, rest = rest.partition(b'\n')
    key, _, value = size_line.decode('ascii', 'replace').partition('=')
    if key != 'manifest_bytes' or not value.isdigit():
        raise FormatError(f'{path}: field manifest_bytes is missing')
    size = int(value)
    if len(rest) < size:
        raise FormatError(f'{path}: field manifest is truncated')
    manifest, data = rest[:size].decode('utf-8'), rest[size:]

    arrays = {}
    meta = {}
    for line in manifest.splitlines():
        field, _, value = line.partition('=')
        if field.startswith('meta.'):
            try:
                meta[field[len('meta.'):]] = json.loads(value)
            except ValueError:
                raise FormatError(f'{path}: field {field} is not valid JSON')
        elif field.startswith('tensor.'):
            name = field[len('tensor.'):]
            shape_text, _, offset_text = value.partition('@')
            try:
                shape = _parse_shape(shape_text)
                offset = int(offset_text)
            except ValueError:
                raise FormatError(f'{path}: field {field} is malformed')
            count = int(np.prod(shape))
            end = offset + 4 * count
            if offset < 0 or end > len(data):
                raise FormatError(f'{path}: field {field} points past the end '
                                  'of the data (truncated file)')
            arrays[name] = np.frombuffer(data[offset:end], dtype='<f4') \
                .reshape(shape).astype(np.float32)
        elif line.strip():
            raise FormatError(f'{path}: unknown manifest field {field!r}')
    return arrays, meta


# Images and logs

def write_ppm(path, rgb):
    """Writes an H x W x 3 uint8 array as a binary portable pixmap (P6)."""
    rgb = np.asarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise FormatError('image must be H x W x 3, got '
                          + _shape_str(rgb.shape))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    height, width = rgb.shape[:2]
    with open(path, 'wb') as image:
        image.write(f'P6\n{width} {height}\n255\n'.encode('ascii'))
        image.write(np.ascontiguousarray(rgb).tobytes())


def write_json(path, obj):
    """Writes `obj` as indented JSON with sorted keys."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as json_file:
        json.dump(obj, json_file, indent=2, sort_keys=True)
        json_file.write('\n')


def read_json(path):
    with open(path) as json_file:
        return json.load(json_file)


def write_json_lines(path, records, append=False):
    """Writes one compact JSON object per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'a' if append else 'w') as log_file:
        for record in records:
            log_file.write(json.dumps(record, sort_keys=True) + '\n')


def read_json_lines(path):
    with open(path) as log_file:
        return [json.loads(line) for line in log_file if line.strip()]
