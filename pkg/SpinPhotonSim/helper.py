import base64
import io

import numpy
import Pyro5.api

from . import errors


def save_numpy_array(arr):
    """
    Saves the numpy array in the NPY format for network transmission.
    Pickle is disabled, emission tables and tags are plain numeric arrays.
    Pyro5 does not transport bytearrays, so the payload is base64 encoded.
    """
    output = io.BytesIO()
    numpy.save(output, arr=arr, allow_pickle=False)
    data = base64.b64encode(output.getvalue()).decode('ASCII')
    return {'data': data, '__class__': "numpy.ndarray"}


def load_numpy_array(classname, data):
    assert classname == 'numpy.ndarray'
    buffer = io.BytesIO(base64.b64decode(data['data'].encode('ASCII')))
    return numpy.load(buffer, allow_pickle=False)


def register_numpy_handler():
    """
    Register numpy.ndarray in Pyro5 for native numpy support.
    Arrays are always streamed instead of creating a server side handle.
    """
    Pyro5.api.register_class_to_dict(
        clazz=numpy.ndarray, converter=save_numpy_array)
    Pyro5.api.register_dict_to_class(
        classname='numpy.ndarray', converter=load_numpy_array)


def load_error(classname, data):
    """Rebuilds a SpinPhotonSim exception raised on the server."""
    cls = getattr(errors, classname.rsplit('.', 1)[-1], errors.SpinPhotonSimError)
    exc = cls.__new__(cls)
    Exception.__init__(exc, *data.get('args', ()))
    for key, value in data.get('attributes', {}).items():
        setattr(exc, key, value)
    return exc


def register_error_handler():
    """Lets remote SpinPhotonSim errors arrive as their own class instead of a SerializeError."""
    for name in dir(errors):
        cls = getattr(errors, name)
        if isinstance(cls, type) and issubclass(cls, errors.SpinPhotonSimError):
            Pyro5.api.register_dict_to_class(classname=f'{cls.__module__}.{cls.__name__}', converter=load_error)
