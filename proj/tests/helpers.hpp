#pragma once

#include <cmath>
#include <cstring>
#include <vector>

#include "onadapt/model.hpp"
#include "onadapt/rng.hpp"

namespace testutil {

inline onadapt::InputWindow random_window(onadapt::Rng& rng, Eigen::Index n, Eigen::Index d, double scale = 1.0) {
    onadapt::InputWindow x;
    x.steps.resize(n, d);
    for (Eigen::Index i = 0; i < x.steps.size(); ++i) x.steps.data()[i] = scale * rng.normal();
    return x;
}

inline Eigen::VectorXd random_vector(onadapt::Rng& rng, Eigen::Index n, double scale = 1.0) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = scale * rng.normal();
    return v;
}

inline onadapt::InputWindow window_of(std::initializer_list<std::initializer_list<double>> rows) {
    onadapt::InputWindow x;
    x.steps.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
    Eigen::Index r = 0;
    for (const auto& row : rows) {
        Eigen::Index c = 0;
        for (double v : row) x.steps(r, c++) = v;
        ++r;
    }
    return x;
}

inline double rel_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    const double scale = std::max(b.norm(), 1e-12);
    return (a - b).norm() / scale;
}

inline bool bitwise_equal(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        if (std::memcmp(&a.data()[i], &b.data()[i], sizeof(double)) != 0) return false;
    }
    return true;
}

}  // namespace testutil
