import pytest

from nzcodec.container import MAGIC, BitstreamContainer
from nzcodec.errors import CorruptStreamError, FormatError


def _container():
    return BitstreamContainer(1, 4, 0, 70, 130, [b"abc", b"", b"\x00" * 300])


def test_round_trip():
    c = _container()
    blob = c.to_bytes()
    assert blob[:4] == MAGIC and len(blob) == len(c)
    back = BitstreamContainer.from_bytes(blob)
    assert back == c and back.triple == (1, 4, 0)
    assert c.payload_bytes() == 303


def test_bad_magic_and_version():
    blob = bytearray(_container().to_bytes())
    with pytest.raises(FormatError):
        BitstreamContainer.from_bytes(b"XXXX" + bytes(blob[4:]))
    blob[4] = 9
    with pytest.raises(FormatError):
        BitstreamContainer.from_bytes(bytes(blob))


@pytest.mark.parametrize("cut", [3, 10, 14, 20, -1])
def test_truncation(cut):
    blob = _container().to_bytes()
    with pytest.raises((CorruptStreamError, FormatError)):
        BitstreamContainer.from_bytes(blob[:cut])


def test_dimension_limits():
    with pytest.raises(FormatError):
        BitstreamContainer(0, 1, 0, 0, 10, []).to_bytes()
    with pytest.raises(FormatError):
        BitstreamContainer(0, 1, 0, 70000, 10, []).to_bytes()
