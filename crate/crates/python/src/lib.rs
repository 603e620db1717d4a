//! Python bindings: scenario generation and I/O, home solves, sensitivities,
//! gradients and the coordination loop.

use pyo3::prelude::*;

#[pymodule]
mod pyloadshape {
    use loadshape::coordinator::full_gradient;
    use loadshape::oracle::{finite_difference_gradient as fd_gradient, objective_at, solve_scenario, FdConfig};
    use loadshape::{
        generate_neighborhood, price_jacobian as jacobian, solve_home_qp, CoordinatorConfig, GradientScaling,
        NeighborhoodConfig, OptimizerKind, PriceVector, QpSettings, Scenario as CoreScenario, StopReason,
    };
    use pyo3::exceptions::{PyIndexError, PyRuntimeError, PyValueError};
    use pyo3::prelude::*;
    use pyo3::types::PyDict;

    fn value_err(e: impl std::fmt::Display) -> PyErr {
        PyValueError::new_err(e.to_string())
    }

    fn runtime_err(e: impl std::fmt::Display) -> PyErr {
        PyRuntimeError::new_err(e.to_string())
    }

    fn prices_for(s: &CoreScenario, prices: Vec<f64>) -> PyResult<PriceVector> {
        if prices.len() != s.horizon {
            return Err(value_err(format!("expected {} prices, got {}", s.horizon, prices.len())));
        }
        PriceVector::new(prices).map_err(value_err)
    }

    /// A neighborhood of homes with their constraint sets and target profile.
    #[pyclass(frozen)]
    pub struct Scenario {
        inner: CoreScenario,
    }

    impl Scenario {
        fn home(&self, index: usize) -> PyResult<&loadshape::Home> {
            self.inner
                .homes
                .get(index)
                .ok_or_else(|| PyIndexError::new_err(format!("home {index} out of range")))
        }
    }

    #[pymethods]
    impl Scenario {
        /// Samples and certifies a neighborhood.
        #[staticmethod]
        #[pyo3(signature = (n_homes = 100, seed = 0, horizon = 96))]
        fn generate(py: Python<'_>, n_homes: usize, seed: u64, horizon: usize) -> PyResult<Self> {
            let cfg = NeighborhoodConfig { n_homes, seed, horizon, ..Default::default() };
            let inner = py.detach(|| generate_neighborhood(&cfg)).map_err(value_err)?;
            Ok(Self { inner })
        }

        #[staticmethod]
        fn from_json(text: &str) -> PyResult<Self> {
            Ok(Self { inner: CoreScenario::from_json(text).map_err(value_err)? })
        }

        fn to_json(&self) -> String {
            self.inner.to_json()
        }

        #[getter]
        fn n_homes(&self) -> usize {
            self.inner.n_homes()
        }

        #[getter]
        fn horizon(&self) -> usize {
            self.inner.horizon
        }

        #[getter]
        fn price_box(&self) -> (f64, f64) {
            (self.inner.price_box.low, self.inner.price_box.high)
        }

        #[getter]
        fn target(&self) -> Vec<f64> {
            self.inner.target.as_slice().to_vec()
        }

        #[getter]
        fn outside_temp(&self) -> Vec<f64> {
            self.inner.outside_temp.clone()
        }

        fn desired_aggregate(&self) -> Vec<f64> {
            self.inner.desired_aggregate()
        }

        /// Appliance kinds of one home, in column order.
        fn appliances(&self, home: usize) -> PyResult<Vec<String>> {
            Ok(self.home(home)?.appliances.iter().map(|a| a.name().to_string()).collect())
        }

        fn __repr__(&self) -> String {
            format!("Scenario(n_homes={}, horizon={})", self.inner.n_homes(), self.inner.horizon)
        }
    }

    /// Solves one home's QP; returns p_star, lambda_star, objective and status.
    #[pyfunction]
    fn solve_home<'py>(py: Python<'py>, scenario: &Scenario, home: usize, prices: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        let h = scenario.home(home)?;
        let pv = prices_for(&scenario.inner, prices)?;
        let sol = solve_home_qp(&h.polyhedron, &h.weights, &h.desired, &pv, QpSettings::default()).map_err(runtime_err)?;
        let d = PyDict::new(py);
        d.set_item("p_star", sol.p_star)?;
        d.set_item("lambda_star", sol.lambda_star)?;
        d.set_item("objective", sol.objective_value)?;
        d.set_item("status", format!("{:?}", sol.status).to_lowercase())?;
        Ok(d)
    }

    /// d p*/d pi for one home as rows over its stacked variables.
    #[pyfunction]
    fn price_jacobian(scenario: &Scenario, home: usize, prices: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let h = scenario.home(home)?;
        let pv = prices_for(&scenario.inner, prices)?;
        let sol = solve_home_qp(&h.polyhedron, &h.weights, &h.desired, &pv, QpSettings::default()).map_err(runtime_err)?;
        let j = jacobian(&sol, &h.polyhedron, &h.weights).map_err(runtime_err)?;
        let m = j.matrix();
        Ok((0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect())
    }

    /// Coordinator objective after every home best-responds to `prices`.
    #[pyfunction]
    fn objective(py: Python<'_>, scenario: &Scenario, prices: Vec<f64>) -> PyResult<f64> {
        prices_for(&scenario.inner, prices.clone())?;
        py.detach(|| objective_at(&scenario.inner, &prices, QpSettings::default())).map_err(runtime_err)
    }

    /// Exact price gradient of the objective and the number of homes with
    /// weakly active rows.
    #[pyfunction]
    fn coordinator_gradient(py: Python<'_>, scenario: &Scenario, prices: Vec<f64>) -> PyResult<(Vec<f64>, usize)> {
        let pv = prices_for(&scenario.inner, prices)?;
        py.detach(|| {
            let sols = solve_scenario(&scenario.inner, &pv, QpSettings::default()).map_err(runtime_err)?;
            full_gradient(&scenario.inner, &sols, loadshape::sensitivity::DEFAULT_TOL_ACT).map_err(runtime_err)
        })
    }

    #[pyfunction]
    #[pyo3(signature = (scenario, prices, step = 1e-5))]
    fn finite_difference_gradient(py: Python<'_>, scenario: &Scenario, prices: Vec<f64>, step: f64) -> PyResult<Vec<f64>> {
        prices_for(&scenario.inner, prices.clone())?;
        let fd = FdConfig { step, ..Default::default() };
        py.detach(|| fd_gradient(&scenario.inner, &prices, fd)).map_err(runtime_err)
    }

    /// Runs the coordination loop and returns its trace as a dict.
    #[pyfunction]
    #[pyo3(signature = (scenario, batch_size = None, optimizer = "adam", learning_rate = 0.1, k_max = 50,
                        epsilon = 1e-3, seed = 0, scaling = "unbiased", workers = 0))]
    #[allow(clippy::too_many_arguments)]
    fn run_coordination<'py>(
        py: Python<'py>,
        scenario: &Scenario,
        batch_size: Option<usize>,
        optimizer: &str,
        learning_rate: f64,
        k_max: usize,
        epsilon: f64,
        seed: u64,
        scaling: &str,
        workers: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let optimizer = match optimizer {
            "adam" => OptimizerKind::Adam,
            "sgd" | "scaled_sgd" => OptimizerKind::ScaledSgd,
            other => return Err(value_err(format!("unknown optimizer {other:?}"))),
        };
        let gradient_scaling = match scaling {
            "sum" => GradientScaling::Sum,
            "unbiased" => GradientScaling::Unbiased,
            other => return Err(value_err(format!("unknown scaling {other:?}"))),
        };
        let cfg = CoordinatorConfig {
            batch_size,
            optimizer,
            learning_rate,
            k_max,
            epsilon,
            seed,
            gradient_scaling,
            workers,
            ..Default::default()
        };
        let r = py
            .detach(|| loadshape::run_coordination(&scenario.inner, &cfg))
            .map_err(|e| match e {
                loadshape::CoordinatorError::Config(m) => value_err(m),
                other => runtime_err(other),
            })?;
        let d = PyDict::new(py);
        d.set_item("initial_prices", r.initial_prices.as_slice().to_vec())?;
        d.set_item("final_prices", r.final_prices.as_slice().to_vec())?;
        d.set_item("initial_objective", r.initial_objective)?;
        d.set_item("final_objective", r.final_objective())?;
        d.set_item("objectives", r.trace.iter().map(|t| t.objective).collect::<Vec<_>>())?;
        d.set_item("grad_norms", r.trace.iter().map(|t| t.grad_norm).collect::<Vec<_>>())?;
        let stop = match r.stop_reason {
            StopReason::Converged => "converged",
            StopReason::KMax => "k_max",
            StopReason::TimeBudget => "time_budget",
        };
        d.set_item("stop_reason", stop)?;
        d.set_item("final_schedules", r.final_schedules)?;
        d.set_item("wall_ms", r.wall_ms)?;
        Ok(d)
    }
}
