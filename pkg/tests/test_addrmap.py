import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dram_calib import addrmap
from dram_calib.addrmap import COORDS, AddressMapping, DramCoord
from dram_calib.errors import AddressOutOfRange, InconsistentMappingError, ParseError, ValidationError


def parity_oracle(masks, consts, addr):
    """Straightforward per-bit parity, independent of the package code."""
    out = {}
    for c in COORDS:
        v = 0
        for k, m in enumerate(masks.get(c, ())):
            bits = [(addr >> i) & 1 for i in range(64) if (m >> i) & 1]
            v |= ((sum(bits) % 2) ^ consts.get(c, (0,) * 64)[k]) << k
        out[c] = v
    return out


def random_mapping(rng, address_bits=30, widths=None):
    widths = widths or {"rank": 1, "bank": 4}
    masks = {c: tuple(int(rng.integers(1, 1 << address_bits)) for _ in range(w)) for c, w in widths.items()}
    consts = {c: tuple(int(v) for v in rng.integers(0, 2, w)) for c, w in widths.items()}
    return AddressMapping(address_bits, masks, consts)


def test_identity_zero_address():
    m = AddressMapping(12, {"bank": tuple(1 << (i + 6) for i in range(4))})
    assert addrmap.decompose(m, 0) == DramCoord(0, 0, 0, 0, 0, 0)


def test_single_bit_parity():
    m = AddressMapping(16, {"bank": ((1 << 6) | (1 << 13),)})
    assert addrmap.decompose(m, 1 << 13).bank == 1
    assert addrmap.decompose(m, (1 << 13) | (1 << 6)).bank == 0


def test_out_of_range():
    m = AddressMapping(8, {"bank": (1 << 6,)})
    with pytest.raises(AddressOutOfRange):
        addrmap.decompose(m, 256)
    with pytest.raises(AddressOutOfRange):
        addrmap.decompose_many(m, [1, 300])
    with pytest.raises(ValidationError):
        AddressMapping(8, {"bank": (1 << 9,)})


def test_random_mapping_matches_parity_oracle():
    rng = np.random.default_rng(1)
    m = random_mapping(rng, 30, {"channel": 1, "rank": 2, "bank_group": 2, "bank": 2, "row": 6, "column": 5})
    addrs = rng.integers(0, 1 << 30, 1000)
    many = addrmap.decompose_many(m, addrs)
    for i, a in enumerate(addrs.tolist()):
        want = parity_oracle(m.masks, m.constants, a)
        got = addrmap.decompose(m, a)
        assert got._asdict() == want
        assert all(int(many[c][i]) == want[c] for c in COORDS)


def test_default_mapping_geometry(device, mapping):
    mapping.validate_geometry(device)
    assert mapping.widths == {"channel": 0, "rank": 1, "bank_group": 2, "bank": 2, "row": 15, "column": 10}
    # consecutive 64 B lines stay in one row for 8 KiB
    co = addrmap.decompose_many(mapping, np.arange(0, 8192, 64))
    assert len(set(co["row"].tolist())) == 1 and len(set(co["bank"].tolist())) == 1
    assert addrmap.decompose(mapping, 8192).bank_group == 1


def test_line_offset_bits_rejected(device):
    m = AddressMapping(33, {"bank": (1 << 4,)})
    with pytest.raises(ValidationError, match="line-offset"):
        m.validate_geometry()


def test_geometry_width_mismatch(device):
    m = addrmap.bit_slice_mapping([("column", 10), ("bank_group", 1), ("bank", 2), ("rank", 1), ("row", 4)])
    with pytest.raises(ValidationError, match="bank_group"):
        m.validate_geometry(device)


def test_infer_planted():
    rng = np.random.default_rng(7)
    planted = random_mapping(rng)
    addrs = rng.integers(0, 1 << 30, 256).tolist()
    samples = [(a, addrmap.decompose(planted, a)) for a in addrs]
    rows = [a | (1 << 30) for a in addrs]
    assert addrmap.gf2_rank(rows, 31) == 31
    res = addrmap.infer_mapping(samples, {"rank": 1, "bank": 4}, address_bits=30)
    assert res.exact and res.rank == 31
    assert res.mapping.masks == planted.masks
    assert res.mapping.constants == planted.constants


def test_infer_all_zero_addresses():
    samples = [(0, DramCoord(0, 1, 0, 2, 0, 0))] * 5
    res = addrmap.infer_mapping(samples, {"rank": 1, "bank": 2}, address_bits=10)
    assert not res.exact
    assert set(res.underdetermined) == {("rank", 0), ("bank", 0), ("bank", 1)}
    assert all(v == 10 for v in res.underdetermined.values())
    assert res.mapping.constants["rank"] == (1,)
    assert res.mapping.constants["bank"] == (0, 1)
    assert res.mapping.masks["bank"] == (0, 0)


def test_infer_inconsistent():
    samples = [(64, DramCoord(0, 0, 0, 1, 0, 0)), (64, DramCoord(0, 0, 0, 2, 0, 0))]
    with pytest.raises(InconsistentMappingError) as ei:
        addrmap.infer_mapping(samples, {"bank": 2}, address_bits=8)
    assert set(ei.value.bits) == {"bank.0", "bank.1"}


def test_infer_nonlinear_is_inconsistent():
    # bank = a6 AND a7 is not an XOR function
    samples = [(a, DramCoord(0, 0, 0, ((a >> 6) & (a >> 7)) & 1, 0, 0)) for a in range(0, 256, 64)]
    with pytest.raises(InconsistentMappingError):
        addrmap.infer_mapping(samples, {"bank": 1}, address_bits=8)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(8, 80))
def test_inference_reproduces_samples_and_ignores_order(seed, n):
    rng = np.random.default_rng(seed)
    planted = random_mapping(rng, 16, {"rank": 1, "bank_group": 2, "bank": 2})
    addrs = rng.integers(0, 1 << 16, n).tolist()
    samples = [(a, addrmap.decompose(planted, a)) for a in addrs]
    widths = {"rank": 1, "bank_group": 2, "bank": 2}
    res = addrmap.infer_mapping(samples, widths, address_bits=16)
    for a, c in samples:
        assert addrmap.decompose(res.mapping, a) == c
    shuffled = [samples[i] for i in rng.permutation(n)]
    res2 = addrmap.infer_mapping(shuffled, widths, address_bits=16)
    if res.exact:
        assert res2.mapping == res.mapping
    for a, c in samples:
        assert addrmap.decompose(res2.mapping, a) == c


def test_mapping_file_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    m = random_mapping(rng, 20, {"rank": 1, "bank": 3, "row": 2})
    text = addrmap.format_mapping(m)
    assert "+1" in text or not any(any(v) for v in m.constants.values())
    p = tmp_path / "m.map"
    addrmap.save_mapping(m, p)
    assert addrmap.load_mapping(p) == m


def test_mapping_file_syntax():
    m = addrmap.parse_mapping("# comment\naddress_bits = 14\nbank.0 = xor(a6, a13) +1\nbank.1 = xor(a7)\n")
    assert m.masks["bank"] == ((1 << 6) | (1 << 13), 1 << 7)
    assert m.constants["bank"] == (1, 0)
    with pytest.raises(ParseError) as ei:
        addrmap.parse_mapping("bank.0 = xor(a6)\nbank.1 = and(a7)\n")
    assert ei.value.line == 2
    with pytest.raises(ParseError, match="contiguous"):
        addrmap.parse_mapping("bank.1 = xor(a6)\n")


def test_shipped_map_matches_default(device, mapping):
    from dram_calib.pipeline import DATA_DIR

    assert addrmap.load_mapping(DATA_DIR / "ddr4_2rx8_default.map") == mapping


def test_samples_csv(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("address,channel,rank,bank_group,bank,row,column\n0x40,0,1,0,2,0,0\n128,0,0,1,3,5,1\n")
    s = addrmap.read_samples_csv(p)
    assert s[0] == (64, DramCoord(0, 1, 0, 2, 0, 0))
    assert addrmap.widths_from_samples(s)["bank"] == 2
