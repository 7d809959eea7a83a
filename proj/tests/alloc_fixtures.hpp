#pragma once

#include "hls/allocation.hpp"

// Design with prescribed weights and Christoffel values. Rows of V are chosen
// so that Phi_i = m ||V_i||^2 holds; for n = 1 the single column is sqrt(Phi/m).
inline hls::SampleDesign scalar_design(const Eigen::VectorXd& w, const Eigen::VectorXd& phi) {
    hls::SampleDesign d;
    const auto m = w.size();
    d.points = Eigen::MatrixXd::Zero(m, 1);
    d.weights = w;
    d.phi = phi;
    d.design = (phi / static_cast<double>(m)).cwiseSqrt();
    d.singular_values = Eigen::JacobiSVD<Eigen::MatrixXd>(d.weighted_design()).singularValues();
    return d;
}

// Design whose weighted matrix W^{1/2}V equals `a` exactly.
inline hls::SampleDesign design_from_weighted(const Eigen::MatrixXd& a, const Eigen::VectorXd& w) {
    hls::SampleDesign d;
    const auto m = a.rows();
    d.points = Eigen::MatrixXd::Zero(m, 1);
    d.weights = w;
    d.design = w.cwiseSqrt().cwiseInverse().asDiagonal() * a;
    d.phi = static_cast<double>(m) * d.design.rowwise().squaredNorm();
    d.singular_values = Eigen::JacobiSVD<Eigen::MatrixXd>(a).singularValues();
    return d;
}
