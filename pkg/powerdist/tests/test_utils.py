from fractions import Fraction

import pytest

import powerdist.utils


def test_to_fraction_reads_decimals_exactly():
    assert powerdist.utils.to_fraction('12.5') == Fraction(25, 2)
    assert powerdist.utils.to_fraction('0.1') == Fraction(1, 10)
    assert powerdist.utils.to_fraction(3) == 3

    with pytest.raises(ValueError, match='latency'):
        powerdist.utils.to_fraction('fast', 'latency')


def test_format_time():
    assert powerdist.utils.format_time(Fraction(19)) == '19'
    assert powerdist.utils.format_time(Fraction(21, 2)) == '10.5'
    assert powerdist.utils.format_time(Fraction(1, 3)) == '0.333333333'
    assert powerdist.utils.format_time(None) == ''


@pytest.mark.parametrize('text, expected', [
    ('0..6', [0, 1, 2, 3, 4, 5, 6]),
    ('0..6:2', [0, 2, 4, 6]),
    ('0,1.5,3', [0, Fraction(3, 2), 3]),
    ('6000..9000:1500', [6000, 7500, 9000]),
    ('4', [4]),
])
def test_parse_range(text, expected):
    assert powerdist.utils.parse_range(text) == expected


def test_parse_range_rejects_bad_step():
    with pytest.raises(ValueError, match='step'):
        powerdist.utils.parse_range('0..6:0')


def test_consume_uint():
    buffer = bytearray(b'\x01\x00\x02\x00\x00\x00\x03\xff')
    assert powerdist.utils.consume_byte(buffer) == 1
    assert powerdist.utils.consume_short(buffer) == 2
    assert powerdist.utils.consume_int(buffer) == 3
    assert buffer == bytearray(b'\xff')

    with pytest.raises(ValueError, match='truncated'):
        powerdist.utils.consume_short(buffer)


def test_pack_uint():
    assert powerdist.utils.pack_uint(258, 2) == b'\x01\x02'
    with pytest.raises(ValueError, match='node id'):
        powerdist.utils.pack_uint(2 ** 32, 4, 'node id')
    with pytest.raises(ValueError):
        powerdist.utils.pack_uint(-1, 4)


def test_align_columns():
    text = powerdist.utils.align_columns([
        ['', 'a', 'bb'],
        ['row', '10', '2'],
    ])
    assert text == '      a  bb\nrow  10   2'
