import pytest

from dualtrap.potential import calibrate


@pytest.fixture(scope="session")
def basis():
    return calibrate()


@pytest.fixture(scope="session")
def separation(basis):
    from dualtrap.waveform import synthesize_separation

    return synthesize_separation(basis)


@pytest.fixture(scope="session")
def separation_tracks(basis, separation):
    from dualtrap.dynamics import track_modes

    return (track_modes(basis, separation, n_ions=1, stride=10),
            track_modes(basis, separation, n_ions=2, stride=10))
