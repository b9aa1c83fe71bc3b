import datetime as dt

import numpy as np
import pytest
from hypothesis import settings

from proptax_equity.domain import CountyPanel, SaleRecord

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile("ci")


def make_panel(n=100, county="17031", start=2018, years=3, price=None, assessed=None, seed=0):
    rng = np.random.default_rng(seed)
    recs = []
    for i in range(n):
        s = float(price[i]) if price is not None else float(rng.uniform(5e4, 5e5))
        a = float(assessed[i]) if assessed is not None else s * float(rng.uniform(0.8, 1.2))
        d = dt.date(start + i % years, 1 + i % 12, 1 + i % 28)
        recs.append(SaleRecord(county, f"{county}0001001", d, s, a, {"sqft": float(i)}))
    return CountyPanel.from_records(recs, county, (start, start + years - 1))


@pytest.fixture
def panel():
    return make_panel()


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
