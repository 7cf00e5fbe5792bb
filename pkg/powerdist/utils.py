from fractions import Fraction


class lazyval:
    """Decorator to lazily compute and cache a value.
    """
    def __init__(self, fget):
        self._fget = fget
        self._name = None

    def __set_name__(self, owner, name):
        self._name = name

    def __get__(self, instance, owner):
        if instance is None:
            return self

        value = self._fget(instance)
        vars(instance)[self._name] = value
        return value

    def __set__(self, instance, value):
        vars(instance)[self._name] = value


def to_fraction(value, name='value'):
    """Parse a number exactly.

    Parameters
    ----------
    value : str, int, float or Fraction
        The value to convert. Strings like ``'12.5'`` are read exactly rather
        than through a binary float.
    name : str, optional
        The name of the value, used in error messages.

    Returns
    -------
    fraction : Fraction
        The exact value.

    Raises
    ------
    ValueError
        Raised when ``value`` is not a finite number.
    """
    try:
        return Fraction(value)
    except (ValueError, TypeError, OverflowError, ZeroDivisionError):
        raise ValueError(f'{name} should be a number, got {value!r}')


def format_time(value):
    """Format an exact time for text output.

    Integral values are written without a decimal point; everything else is
    written with nine significant digits so output is stable across runs.
    """
    if value is None:
        return ''
    value = Fraction(value)
    if value.denominator == 1:
        return str(value.numerator)
    return format(float(value), '.9g')


def parse_range(text):
    """Parse a list of numbers from the command line.

    Parameters
    ----------
    text : str
        Either a comma separated list (``'0,2,4'``), an inclusive integer range
        (``'0..6'``), or a stepped range (``'0..6:2'``).

    Returns
    -------
    values : list[Fraction]
        The parsed values in order.
    """
    text = text.strip()
    if '..' in text:
        start, _, rest = text.partition('..')
        stop, _, step = rest.partition(':')
        start = to_fraction(start.strip(), 'range start')
        stop = to_fraction(stop.strip(), 'range stop')
        step = to_fraction(step.strip() or 1, 'range step')
        if step <= 0:
            raise ValueError(f'range step must be positive, got {text!r}')
        values = []
        value = start
        while value <= stop:
            values.append(value)
            value += step
        return values

    return [
        to_fraction(part.strip(), 'list element')
        for part in text.split(',')
        if part.strip()
    ]


# consume_* helper functions to read network byte order datagrams

def consume_uint(buffer, width):
    """Consume an unsigned big-endian integer from the front of ``buffer``.

    Parameters
    ----------
    buffer : bytearray
        The buffer to read from. The consumed bytes are removed.
    width : int
        The number of bytes in the integer.

    Returns
    -------
    value : int
        The decoded integer.

    Raises
    ------
    ValueError
        Raised when fewer than ``width`` bytes remain.
    """
    if len(buffer) < width:
        raise ValueError(
            f'truncated: needed {width} bytes, {len(buffer)} remain',
        )
    result = int.from_bytes(buffer[:width], 'big')
    del buffer[:width]
    return result


def consume_byte(buffer):
    return consume_uint(buffer, 1)


def consume_short(buffer):
    return consume_uint(buffer, 2)


def consume_int(buffer):
    return consume_uint(buffer, 4)


def pack_uint(value, width, field='value'):
    """Pack an unsigned big-endian integer.

    Raises
    ------
    ValueError
        Raised when ``value`` does not fit in ``width`` bytes.
    """
    try:
        return int(value).to_bytes(width, 'big')
    except OverflowError:
        raise ValueError(
            f'{field} does not fit in {width} unsigned bytes: {value!r}',
        )


def align_columns(rows):
    """Render rows of strings as right aligned columns separated by two
    spaces.
    """
    widths = [max(len(cell) for cell in column) for column in zip(*rows)]
    return '\n'.join(
        '  '.join(cell.rjust(width) for cell, width in zip(row, widths))
        .rstrip()
        for row in rows
    )
