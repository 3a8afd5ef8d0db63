use pyo3::ffi::c_str;
use pyo3::prelude::*;
use wan::wan as wan_module;

#[test]
fn module_works_from_an_embedded_interpreter() {
    pyo3::append_to_inittab!(wan_module);
    Python::initialize();
    Python::attach(|py| {
        py.run(
            c_str!(
                r#"
import wan
net = wan.Network(2, [4, 4], ["tanh"], 3)
assert net.param_count == 2 * 4 + 4 + 4 * 4 + 4 + 4 + 1
vals, grads = net.eval([[0.1, 0.2], [0.3, 0.4]])
assert len(vals) == 2 and len(grads[0]) == 2
p = net.params
p[0] += 1.0
net.params = p
assert net.params[0] == p[0]
exp = wan.Experiment.named("nonl_cube_d5")
assert exp.spatial_dim == 5 and len(exp.digest()) == 16
assert exp.with_overrides(seed=7).digest() != exp.digest()
u = wan.Network.default_u(exp.input_dim, 0)
err = exp.relative_error(u)
assert err is not None and err > 0.0
assert "nonl_cube_d5" in wan.problems()
try:
    wan.Experiment.from_json("{")
    raise AssertionError("malformed config accepted")
except ValueError:
    pass
"#
            ),
            None,
            None,
        )
        .unwrap();
    });
}
