import csv
import datetime
import json
import math
import os
from collections import OrderedDict
from gridinertia import current_cfg
from gridinertia.errors import InputError


def log(msg):
    """ Write a log message to the log file
    """

    timestamp = str(datetime.datetime.now()).split('.')[0]
    fn = current_cfg().log_file()
    # make /dev/stdout usable as log file
    # https://www.bugs.python.org/issue27805
    if fn == '/dev/stdout':
        mode = 'w'
    else:
        mode = 'a'
    with open(fn, mode) as f:
        f.write('[{}]   {}\n'.format(timestamp, msg))


def read_text(path, what='file'):
    """ Return the contents of a text file or raise an InputError naming the
        path.
    """

    if not os.path.isfile(path):
        raise InputError('{} "{}" not found'.format(what, path))
    try:
        with open(path, encoding='utf-8') as f:
            return f.read()
    except (OSError, UnicodeDecodeError) as e:
        raise InputError('{} "{}" could not be read: {}'.format(what, path, e))


def parse_json_document(text, what='document', error_class=InputError):
    """ Parse a JSON document keeping key order. Parse errors are reported
        with line and column.
    """

    try:
        return json.loads(text, object_pairs_hook=OrderedDict)
    except ValueError as e:
        lineno = getattr(e, 'lineno', '?')
        colno = getattr(e, 'colno', '?')
        raise error_class(('{} is not valid JSON (line {}, column {}): {}'
                           '').format(what, lineno, colno, e))


def dump_json_document(doc):
    """ Serialize a document deterministically. Floats keep full precision
        (repr), key order is the insertion order of the OrderedDicts used to
        build the document. NaN and infinities are written as null.
    """

    return json.dumps(to_jsonable(doc), indent=2, allow_nan=False) + '\n'


def write_text(path, text):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write(text)


def write_csv(path, header, rows):
    """ Write a CSV file with a header row. Float cells are written with full
        precision.
    """

    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(c)) if isinstance(c, float) else c
                             for c in row])


def fmt6(value):
    """ Format a number with 6 significant digits for human readable tables.
    """

    if value is None:
        return '--'
    return '{:.6g}'.format(value)


def to_jsonable(value):
    """ Convert numpy scalars and arrays (possibly nested in lists or dicts)
        into plain Python objects. Non-finite floats become None.
    """

    if hasattr(value, 'tolist'):
        return to_jsonable(value.tolist())
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return OrderedDict((k, to_jsonable(v)) for k, v in value.items())
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    return value
