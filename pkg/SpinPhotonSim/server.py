import inspect
import logging
import uuid
from typing import Optional

import numpy as np
import Pyro5.api

from . import __version__, detection, dynamics, helper, system
from .analysis import entanglement_bound
from .config import detector_from_mapping, imperfections_from_mapping, system_params_from_mapping
from .dynamics import ensemble_integrated_emission, run_batch
from .errors import InvalidParameter, SimulationError
from .sequence import RotationCalibration, parse_sequence

OBJECT_ID = 'SpinPhotonSim'
DEFAULT_PORT = 23100

logger = logging.getLogger('SpinPhotonSim.server')


class Daemon(Pyro5.api.Daemon):
    """Customized Pyro5 Daemon."""

    def proxy2object(self, pyro_proxy):
        """Returns the Pyro object for a given proxy."""
        objectId = pyro_proxy._pyroUri.object
        return self.objectsById.get(objectId)


class TrackedResource:
    """Implements 'close' method that clears the underlying object.
        This class is not exposed by the Pyro and therefore its methods do
        not appear on the client proxy.
    """
    _obj: object
    _id: str
    _pyroDaemon: Daemon

    def __init__(self, obj):
        self._obj = obj
        self._id = type(self).__name__ + "_" + uuid.uuid4().hex
        self._logger = logger.getChild(type(self).__name__)
        self._logger.debug('New adapter instance: %s', self)
        Pyro5.api.current_context.track_resource(self)

    def __repr__(self) -> str:
        return '<' + self._id + '>'

    def close(self):
        self._logger.debug('Closed: %s', self)
        self._obj = None
        # Tracking is removed together with the registration.
        if hasattr(self, '_pyroDaemon'):
            self._pyroDaemon.unregister(self)
            self._logger.debug('Unregistered: %s', self)
        else:
            self._logger.warning('Failed to unregister: %s', self)


class Simulation:
    """Server side state of one remote simulation."""

    def __init__(self, sequence, params, imperfections, calibration):
        self.sequence = sequence
        self.params = params
        self.imperfections = imperfections
        self.calibration = calibration
        self.table: Optional[dynamics.EmissionTable] = None
        self.sequence_run = None

    def at(self, scan_point: int):
        points = self.sequence.scan_points()
        if not 0 <= scan_point < len(points):
            raise InvalidParameter(f'scan point {scan_point} out of range 0..{len(points) - 1}')
        return self.sequence.at(points[scan_point])


@Pyro5.api.expose
class SimulationAdapter(TrackedResource):
    """Remote handle of a Simulation, created by ``SimulatorRPC.createSimulation``."""

    def close(self):
        """Discard server-side simulation explicitly"""
        super().close()

    def scanPoints(self):
        return [[float(v) for v in p] for p in self._obj.sequence.scan_points()]

    def run(self, seed: int, n_trajectories: int, start: int = 0, initial: str = 'mixed', scan_point: int = 0):
        """Runs trajectories and keeps the emission table; returns the number of emissions."""
        sim = self._obj
        seq = sim.at(scan_point)
        batch = run_batch(seed, seq, sim.params, sim.imperfections, n_trajectories, start, initial, sim.calibration)
        sim.table, sim.sequence_run = batch.table, seq
        self._logger.debug('%s: %d trajectories, %d emissions', self, n_trajectories, len(batch.table))
        return len(batch.table)

    def _table(self):
        if self._obj.table is None:
            raise SimulationError('no emissions yet, call run() first')
        return self._obj.table

    def getEmissions(self):
        """Columnar emission records of the last run."""
        table = self._table()
        return {
            'cycle': table.cycle,
            't_phot': table.t_phot,
            'channel': table.channel.astype(np.int64),
            'origin': table.origin.astype(np.int64),
            'port': table.port.astype(np.int64),
            'labels': [c.label for c in table.channels],
            'origins': [o.value for o in dynamics.ORIGINS],
            'period': table.period,
            'n_cycles': table.n_cycles,
        }

    def detect(self, detector: dict, seed: int, channel_id: int = 0):
        """Detected time tags of the last run for one detector described like a ``[detector.N]`` section."""
        table = self._table()
        spec = detector_from_mapping(channel_id, detector, self._obj.params)
        tags = detection.detect(table, spec.filter, spec.detector, seed, self._obj.sequence_run)
        return {'cycle': tags.cycle, 'channel': tags.channel, 't_ps': tags.t_ps, 'n_cycles': tags.n_cycles}

    def integratedEmission(self, window, labels=None, initial: str = 'mixed', scan_point: int = 0):
        """Expected photon number in ``window`` (ns) from the dephasing-averaged master equation."""
        sim = self._obj
        return ensemble_integrated_emission(sim.at(scan_point), sim.params, tuple(window), labels, initial,
                                            sim.imperfections, sim.calibration)


ENUMS = (system.LevelIndex, system.Polarization, system.Branch, system.DephasingShape, system.Unraveling,
         detection.FilterShape, dynamics.Origin)


@Pyro5.api.expose
class SimulatorRPC:
    """Entry point for remote connections."""

    _enums = {
        Cls.__name__: (inspect.getmro(Cls)[1].__name__, tuple((e.name, e.value) for e in Cls))
        for Cls in ENUMS
    }

    def enum_definitions(self):
        return self._enums

    def version(self):
        return __version__

    def createSimulation(self, system_params: dict, sequence_text: str, imperfections: Optional[dict] = None,
                         calibration: Optional[dict] = None):
        """Creates a remote simulation.

        Args:
            system_params: keys of a ``[system]`` section.
            sequence_text: sequence DSL.
            imperfections: keys of an ``[imperfections]`` section.
            calibration: ``coefficient``, ``exponent``, ``reference_detuning_nm``.
        """
        calibration = calibration or {}
        sim = Simulation(parse_sequence(sequence_text), system_params_from_mapping(system_params),
                         imperfections_from_mapping(imperfections or {}),
                         RotationCalibration(float(calibration.get('coefficient', np.pi)),
                                             float(calibration.get('exponent', 0.77)),
                                             float(calibration.get('reference_detuning_nm', 0.6))))
        pyro_obj = SimulationAdapter(sim)
        self._pyroDaemon.register(pyro_obj, pyro_obj._id)
        return pyro_obj

    def freeSimulation(self, simulation_proxy):
        adapter = self._pyroDaemon.proxy2object(simulation_proxy)
        if adapter is not None:
            adapter.close()

    def entanglementBound(self, f1: float, f2: float, f1_error: float = 0.0, f2_error: float = 0.0):
        return entanglement_bound(f1, f2, f1_error, f2_error)


def register_simulator(daemon: Daemon):
    """Registers numpy support and the SimulatorRPC object; returns its URI."""
    helper.register_numpy_handler()
    helper.register_error_handler()
    return daemon.register(SimulatorRPC(), OBJECT_ID)


def start_server(host='localhost', port=DEFAULT_PORT, verbose=False):
    """This method starts the Pyro server eventloop and processes client requests."""

    if verbose:
        logging.basicConfig(level=logging.DEBUG)

    try:
        with Daemon(host=host, port=port) as daemon:
            uri = register_simulator(daemon)
            print('Server URI=', uri)
            # start the event loop of the server to wait for calls
            daemon.requestLoop()
    except KeyboardInterrupt:
        pass


def main():
    import argparse
    import textwrap

    parser = argparse.ArgumentParser(
        formatter_class=argparse.RawDescriptionHelpFormatter,
        description=textwrap.dedent(
            """\
            --------------------------------------------
            SpinPhotonSim RPC Server.
            --------------------------------------------
            """
        )
    )
    parser.add_argument(
        '--host', type=str, dest='host', metavar='localhost', default='localhost',
        help='Hostname or IP on which the server will listen for connections.'
    )
    parser.add_argument(
        '--port', type=int, dest='port', default=DEFAULT_PORT, metavar=str(DEFAULT_PORT),
        help='Server port.'
    )
    parser.add_argument(
        '-v', '--verbose', dest='verbose', action='store_true',
        help='Enable log messages at DEBUG level.'
    )

    args = parser.parse_args()

    start_server(**vars(args))


if __name__ == "__main__":
    main()
