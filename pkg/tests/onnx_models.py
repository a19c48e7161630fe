"""Tiny hand-built ONNX graphs standing in for trained detectors and deblurrers."""
import numpy as np
import onnx
from onnx import TensorProto, helper, numpy_helper

OPSET = 13
IR_VERSION = 8


def _save(graph, path):
    model = helper.make_model(graph, opset_imports=[helper.make_opsetid("", OPSET)])
    model.ir_version = IR_VERSION
    onnx.checker.check_model(model)
    onnx.save(model, str(path))
    return path


def head_detector(path, input_size, channels, bias=None):
    """Pool to strides 8/16/32, then a zero-weight 1x1 conv whose bias is every cell's logits.

    ``channels`` is the per-scale output width; ``bias`` (length
    ``channels``) defaults to all -20 so nothing clears the confidence filter.
    """
    bias = np.full(channels, -20.0, np.float32) if bias is None else np.asarray(bias, np.float32)
    nodes, inits, outputs = [], [], []
    for i, stride in enumerate((8, 16, 32)):
        g = input_size // stride
        nodes.append(helper.make_node("AveragePool", ["images"], [f"p{i}"],
                                      kernel_shape=[stride, stride], strides=[stride, stride]))
        inits.append(numpy_helper.from_array(np.zeros((channels, 3, 1, 1), np.float32), f"w{i}"))
        inits.append(numpy_helper.from_array(bias, f"b{i}"))
        nodes.append(helper.make_node("Conv", [f"p{i}", f"w{i}", f"b{i}"], [f"out{i}"]))
        outputs.append(helper.make_tensor_value_info(f"out{i}", TensorProto.FLOAT, [1, channels, g, g]))
    x = helper.make_tensor_value_info("images", TensorProto.FLOAT, [1, 3, input_size, input_size])
    return _save(helper.make_graph(nodes, "heads", [x], outputs, inits), path)


def candidate_detector(path, input_size, rows):
    """Constant ``(1, N, 5+C)`` candidate output, added to zero times the input mean."""
    rows = np.asarray(rows, np.float32)[None]
    inits = [numpy_helper.from_array(rows, "rows"),
             numpy_helper.from_array(np.zeros((1, 1, 1), np.float32), "zero")]
    nodes = [
        helper.make_node("ReduceMean", ["images"], ["m"], axes=[1, 2, 3], keepdims=0),
        helper.make_node("Reshape", ["m", "shape"], ["m3"]),
        helper.make_node("Mul", ["m3", "zero"], ["z"]),
        helper.make_node("Add", ["rows", "z"], ["output"]),
    ]
    inits.append(numpy_helper.from_array(np.array([1, 1, 1], np.int64), "shape"))
    x = helper.make_tensor_value_info("images", TensorProto.FLOAT, [1, 3, input_size, input_size])
    y = helper.make_tensor_value_info("output", TensorProto.FLOAT, list(rows.shape))
    return _save(helper.make_graph(nodes, "candidates", [x], [y], inits), path)


def identity_deblurrer(path, sizes=(256, 128, 64)):
    """Three RGB inputs; the output is the largest one passed through."""
    ins = [helper.make_tensor_value_info(f"b{i}", TensorProto.FLOAT, [1, 3, s, s])
           for i, s in enumerate(sizes)]
    big = int(np.argmax(sizes))
    # touch the other inputs so the runtime keeps them in the graph
    nodes = [helper.make_node("Identity", [f"b{big}"], ["sharp"])]
    outs = [helper.make_tensor_value_info("sharp", TensorProto.FLOAT, [1, 3, sizes[big], sizes[big]])]
    for i in range(len(sizes)):
        if i != big:
            nodes.append(helper.make_node("Identity", [f"b{i}"], [f"echo{i}"]))
            outs.append(helper.make_tensor_value_info(f"echo{i}", TensorProto.FLOAT,
                                                      [1, 3, sizes[i], sizes[i]]))
    return _save(helper.make_graph(nodes, "deblur", ins, outs), path)
