"""Shared fixtures: the desk-scale dataset and models train once per session
(they are the expensive part of the acceptance gate), and every acceptance
criterion reports one PASSED/FAILED line at the end of the run."""

import pytest

from spikeloop.data import DatasetConfig, make_dataset
from spikeloop.decoder import DecoderConfig, train_decoder
from spikeloop.encoder import EncoderConfig, train_encoder

_acceptance_results = {}


def record_acceptance(name: str, passed: bool, detail: str = "") -> None:
    _acceptance_results[name] = (passed, detail)


@pytest.fixture()
def acceptance():
    return record_acceptance


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for name, (passed, detail) in _acceptance_results.items():
        status = "PASSED" if passed else "FAILED"
        suffix = f"  ({detail})" if detail else ""
        terminalreporter.write_line(f"ACCEPTANCE {name}: {status}{suffix}")


@pytest.fixture(scope="session")
def desk_dataset():
    return make_dataset(DatasetConfig())


@pytest.fixture(scope="session")
def desk_decoder(desk_dataset):
    return train_decoder(desk_dataset, DecoderConfig())


@pytest.fixture(scope="session")
def desk_encoder(desk_dataset):
    return train_encoder(desk_dataset, EncoderConfig())
