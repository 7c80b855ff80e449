"""Smoke test for the sempe_py extension.

Build with `cargo build --release -p sempe-py` and copy
target/release/libsempe_py.so next to this file as sempe_py.so.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import sempe_py as sp


def check_program_round_trip():
    p = sp.Program.assemble("ldi r1, 1\ns.bz r1, T\nldi r2, 5\njmp J\nT:\nldi r2, 7\nJ:\neosjmp\nhalt\n")
    data = p.encode()
    assert bytes([0x2E, 0x90]) in data
    assert sp.Program.decode(data) == p
    legacy = sp.Program.decode(data, mode="legacy")
    assert legacy == p.legacy_view()
    assert legacy.secure_branch_count == 0 and legacy.eosjmp_count == 0
    r = sp.run(p)
    assert r.trap is None and r.registers[2] == 5 and r.secure_regions == 1
    assert sp.run(legacy, mode="legacy").registers[2] == 5


def check_nested_if():
    c = sp.compile(sp.NESTED_IF)
    assert c.secrets == ["A", "B", "C"]
    assert c.program.secure_branch_count == 2
    ok, _ = sp.leakcheck(c, mode="sempe")
    leaky, report = sp.leakcheck(c, mode="legacy")
    assert ok and not leaky, report
    for bits in range(8):
        inputs = {"A": [bits & 1], "B": [bits >> 1 & 1], "C": [bits >> 2 & 1], "j": [3], "k": [3]}
        want = sp.run_compiled(sp.compile(sp.NESTED_IF, mode="plain"), inputs, mode="legacy").globals
        for mode in ("sempe", "cte"):
            got = sp.run_compiled(sp.compile(sp.NESTED_IF, mode=mode), inputs, mode="sempe").globals
            assert got == want, (mode, got, want)
    traces = {sp.observe(c, {"A": [a]}) for a in (0, 1)}
    assert len(traces) == 1
    slow = sp.run_compiled(c, {}, config={"drain_penalty": 100})
    assert slow.cycles > sp.run_compiled(c, {}).cycles


def check_rejection():
    try:
        sp.compile("@secret n;\nvar a;\nfn main() { while (a < n) { a = a + 1; } }\n")
    except sp.CompileRejected as e:
        assert "secret_loop" in str(e)
    else:
        raise AssertionError("secret loop accepted")


def check_bench():
    src = sp.generate_benchmark("fibonacci", 3, iterations=2, size=10)
    assert src == sp.generate_benchmark("fibonacci", 3, iterations=2, size=10)
    assert sp.compile(src).program.secure_branch_count == 3
    csv = sp.run_suite(workloads=["fibonacci"], widths=[1, 10], iterations=2).splitlines()
    assert len(csv) == 1 + 2 * 4
    header = csv[0].split(",")
    rows = [dict(zip(header, line.split(","))) for line in csv[1:]]
    w10 = next(r for r in rows if r["width"] == "10" and r["mode"] == "sempe")
    assert 8.0 <= float(w10["overhead_ratio"]) <= 11.5, w10


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("check_"):
            fn()
            print(f"ok {name[6:]}")
    print("smoke test passed")
