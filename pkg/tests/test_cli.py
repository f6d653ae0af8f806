from __future__ import annotations

import pytest

from advm.env_model import discover
from advm.lint import lint_tree

from conftest import GOLDEN, run_cli, write

PAGE_WRITE = "page_ctrl/test_page_write/src/test.asm"


class TestScaffold:
    def test_creates_clean_env(self, demo):
        result = run_cli("scaffold", "--root", str(demo), "uart_cfg", "smoke", "loopback")
        assert result.code == 0 and result.out == "created uart_cfg\n"
        env = discover(demo).env("uart_cfg")
        assert [c.name for c in env.test_cells] == ["loopback", "smoke"]
        assert (demo / "uart_cfg/Abstraction_Layer/base_functions.asm").is_file()
        assert (demo / "uart_cfg/smoke/src/test.asm").read_text().rstrip().endswith("pass")
        assert lint_tree(demo).diagnostics == ()
        assert run_cli("lint", "--root", str(demo)).code == 0
        assert run_cli("regress", "--root", str(demo), "--env", "uart_cfg").code == 0

    def test_twice_is_env_exists(self, tmp_path):
        assert run_cli("scaffold", "--root", str(tmp_path), "page_ctrl", "smoke").code == 0
        again = run_cli("scaffold", "--root", str(tmp_path), "page_ctrl", "smoke")
        assert again.code == 3 and "EnvExists" in again.err

    def test_derivative_name(self, abuse):
        result = run_cli("scaffold", "--root", str(abuse), "page_ctrl_SLE88B")
        assert result.code == 3 and "DerivativeSpecificName" in result.err


class TestLint:
    def test_clean(self, demo):
        result = run_cli("lint", "--root", str(demo))
        assert (result.code, result.out) == (0, "")
        assert result.err == "0 error(s), 0 warning(s)\n"

    def test_abuse_golden(self, abuse):
        result = run_cli("lint", "--root", str(abuse))
        assert result.code == 2
        assert result.out == (GOLDEN / "abuse_lint.txt").read_text()

    def test_baseline_round_trip(self, abuse, tmp_path):
        base = tmp_path / "baseline.txt"
        assert run_cli("lint", "--root", str(abuse), "--write-baseline", str(base)).code == 2
        result = run_cli("lint", "--root", str(abuse), "--baseline", str(base))
        assert (result.code, result.out) == (0, "")
        assert "suppressed 7" in result.err

    def test_strict_promotes_warnings(self, demo):
        (demo / "page_ctrl").rename(demo / "page_ctrl_B")
        assert run_cli("lint", "--root", str(demo)).code == 0
        assert run_cli("lint", "--root", str(demo), "--strict").code == 2

    def test_records(self, abuse):
        rows = run_cli("lint", "--root", str(abuse), "--format", "records").out.splitlines()
        assert len(rows) == 7 and all(r.startswith('{"path": ') for r in rows)

    def test_env_scope(self, abuse, demo):
        assert run_cli("lint", "--root", str(demo), "--env", "crc_check").code == 0
        assert run_cli("lint", "--root", str(abuse), "--env", "nope").code == 3

    def test_explain(self):
        result = run_cli("lint", "--explain", "ADVM001")
        assert result.code == 0 and result.out.startswith("ADVM001 (Error)")
        assert run_cli("lint", "--explain", "ADVM999").code == 3

    def test_parse_error_is_lint_error(self, demo):
        write(demo / PAGE_WRITE, "frob\n")
        result = run_cli("lint", "--root", str(demo))
        assert result.code == 2 and "UnknownOpcode" in result.out


class TestResolveAndRun:
    def test_resolve_listing_uses_define_values(self, demo):
        a = run_cli("resolve", "--root", str(demo), PAGE_WRITE, "--derivative", "A", "--target", "GRM")
        b = run_cli("resolve", "--root", str(demo), "page_ctrl/test_page_max/src/test.asm", "--derivative", "B", "--target", "GRM")
        assert a.code == b.code == 0
        assert "mov d12, 0x1F\n" in a.out and "mov d12, 0x3F\n" in b.out

    def test_resolve_missing_define(self, demo):
        write(demo / PAGE_WRITE, '#include "globals.inc"\n    mov d0, NOT_THERE\n    pass\n')
        result = run_cli("resolve", "--root", str(demo), PAGE_WRITE)
        assert result.code == 3
        assert "UndefinedSymbol" in result.err and f"{PAGE_WRITE}:2" in result.err

    def test_run_pass(self, demo):
        result = run_cli("run", "--root", str(demo), PAGE_WRITE, "--derivative", "A", "--target", "GRM")
        assert result.code == 0
        assert result.out.startswith("verdict: Pass\n") and "mmio MODULE_CTRL = 0x00000030" in result.out

    def test_run_mismatch_fails(self, demo):
        result = run_cli("run", "--root", str(demo), "page_ctrl/test_page_max/src/test.asm", "--derivative", "B")
        assert result.code == 0
        (demo / "derivative_B.cfg").write_text((demo / "derivative_A.cfg").read_text().replace("name = A", "name = B"))
        result = run_cli("run", "--root", str(demo), "page_ctrl/test_page_max/src/test.asm", "--derivative", "B")
        assert result.code == 1
        assert "verdict: Fail" in result.out and "site: page_ctrl/test_page_max/src/test.asm:7" in result.out

    def test_trace_format(self, demo):
        result = run_cli("run", "--root", str(demo), PAGE_WRITE, "--trace")
        lines = result.out.splitlines()
        assert lines[:3] == [
            f"0 0 {PAGE_WRITE}:5 mov d14, 0x3",
            f"1 1 {PAGE_WRITE}:6 call write_page",
            "2 4 page_ctrl/Abstraction_Layer/base_functions.asm:6 mov d12, 0x1F",
        ]
        assert lines[8] == f"8 2 {PAGE_WRITE}:7 expect d13, 0x30"
        assert lines[9] == f"9 3 {PAGE_WRITE}:8 pass"
        assert lines[10] == "verdict: Pass"


class TestSelectionPrecedence:
    def selected(self, demo, *flags):
        out = run_cli("resolve", "--root", str(demo), "page_ctrl/test_page_max/src/test.asm", *flags).out
        return "B" if "0x3F\n" in out else "A"

    def test_config_default(self, demo, monkeypatch):
        monkeypatch.delenv("ADVM_DERIVATIVE", raising=False)
        assert self.selected(demo) == "A"

    def test_env_beats_config(self, demo, monkeypatch):
        monkeypatch.setenv("ADVM_DERIVATIVE", "B")
        assert self.selected(demo) == "B"

    def test_flag_beats_env(self, demo, monkeypatch):
        monkeypatch.setenv("ADVM_DERIVATIVE", "B")
        assert self.selected(demo, "--derivative", "A") == "A"

    def test_nothing_selected(self, tmp_path, monkeypatch):
        monkeypatch.delenv("ADVM_DERIVATIVE", raising=False)
        monkeypatch.delenv("ADVM_TARGET", raising=False)
        assert run_cli("regress", "--root", str(tmp_path)).code == 3


class TestReleaseAndRegress:
    def test_release_then_check(self, demo):
        result = run_cli("release", "--root", str(demo), "--system")
        assert result.code == 0 and result.out.splitlines()[-1].startswith("system ")
        assert run_cli("release", "--root", str(demo), "--check").out == "ok: tree matches release.lock\n"
        with (demo / "crc_check/Abstraction_Layer/globals.inc").open("a") as fh:
            fh.write("; edit\n")
        check = run_cli("release", "--root", str(demo), "--check")
        assert check.code == 1 and "drift crc_check: changed (Abstraction_Layer/globals.inc)" in check.out
        assert run_cli("regress", "--root", str(demo), "--frozen").code == 3

    def test_release_blocked_by_lint(self, demo):
        write(demo / PAGE_WRITE, '#include "globals.inc"\n#define LOCAL 1\n    pass\n')
        assert run_cli("release", "--root", str(demo), "--env", "page_ctrl").code == 2

    def test_regress_exit_codes(self, demo):
        assert run_cli("regress", "--root", str(demo), "-j", "4").code == 0
        (demo / "derivative_B.cfg").write_text((demo / "derivative_A.cfg").read_text())
        assert run_cli("regress", "--root", str(demo), "--derivative", "B").code == 1

    def test_regress_records(self, demo):
        out = run_cli("regress", "--root", str(demo), "--format", "records").out
        assert len(out.splitlines()) == 5 and all(row.count("\t") == 4 for row in out.splitlines())

    @pytest.mark.parametrize("argv", [[], ["frobnicate"], ["regress", "-j", "0"], ["release"]])
    def test_usage_errors(self, argv):
        assert run_cli(*argv).code == 3

    def test_read_only_commands_write_nothing(self, demo):
        before = sorted((p, p.stat().st_mtime_ns) for p in demo.rglob("*"))
        for argv in (["lint"], ["resolve", PAGE_WRITE], ["run", PAGE_WRITE], ["regress"], ["release", "--check"]):
            run_cli(*argv, "--root", str(demo))
        assert sorted((p, p.stat().st_mtime_ns) for p in demo.rglob("*")) == before
