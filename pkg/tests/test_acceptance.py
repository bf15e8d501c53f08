"""Acceptance suite: every criterion at its stated tolerance.

Runs the ten bundled scenarios under all three strategies (cached for the
whole session) and prints one PASS/FAIL line per criterion.

Known red: `total_migration_bound` fails on the CCR stabilization clause.
With the calibration that reproduces the published restore times
(criterion `restore_ordering`), the source stays paused for the worker
startup window, and draining that backlog holds the output rate ~25% above
its steady value — outside the ±20% stability band — until roughly five
times the pause duration.  A sub-50s stabilization would need sub-second
worker startup, which contradicts the 41s/91s restore targets.  See
notes/decisions.md in the repository history for the full analysis.
"""


from flowmigrate import acceptance


def report(result):
    print()
    print(result.line())
    for detail in result.details:
        print(f"    {detail}")
    assert result.passed, result.name


class TestAcceptance:
    def test_zero_loss(self, suite_cache):
        report(acceptance.check_zero_loss(suite_cache))

    def test_dsm_at_least_once(self, suite_cache):
        report(acceptance.check_dsm_at_least_once(suite_cache))

    def test_restore_ordering(self, suite_cache):
        report(acceptance.check_restore_ordering(suite_cache))

    def test_total_migration_bound(self, suite_cache):
        report(acceptance.check_total_migration_bound(suite_cache))

    def test_drain_vs_capture(self, suite_cache):
        report(acceptance.check_drain_vs_capture(suite_cache))

    def test_dcr_boundary(self, suite_cache):
        report(acceptance.check_dcr_boundary(suite_cache))

    def test_xor_acker_oracle(self):
        report(acceptance.check_xor_acker_oracle())

    def test_stabilization(self, suite_cache):
        report(acceptance.check_stabilization(suite_cache))

    def test_determinism(self, suite_cache):
        report(acceptance.check_determinism(suite_cache))

    def test_state_correctness(self, suite_cache):
        report(acceptance.check_state_correctness(suite_cache))
