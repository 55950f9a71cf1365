#pragma once

#include <functional>

#include "dpfa/graph.hpp"

namespace dpfa {

// Central-difference verification of the tape's gradients. `build` assembles
// a scalar output from leaves that mirror `inputs`, and must be a pure
// function of those leaves. Elements where the second difference betrays a
// kink (max ties, activation boundaries) are excluded and counted as skipped.
template <typename T>
struct GradCheckReport {
    double max_rel_err = 0.0;
    int64_t checked = 0;
    int64_t skipped = 0;
    int worst_input = -1;
    int64_t worst_elem = -1;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;

    bool pass(double tol) const { return max_rel_err < tol; }
};

template <typename T>
using GradCheckBuild =
    std::function<typename Graph<T>::NodeId(Graph<T>&, const std::vector<typename Graph<T>::NodeId>&)>;

template <typename T>
GradCheckReport<T> grad_check(const GradCheckBuild<T>& build, std::vector<Tensor<T>> inputs, T eps) {
    auto eval = [&](const std::vector<Tensor<T>>& at, bool with_grad,
                    Graph<T>* keep) -> std::pair<T, std::vector<std::vector<T>>> {
        Graph<T> local;
        Graph<T>& g = keep ? *keep : local;
        std::vector<typename Graph<T>::NodeId> ids;
        ids.reserve(at.size());
        for (const Tensor<T>& t : at) {
            Tensor<T> v = t;
            v.requires_grad = with_grad;
            v.grad.clear();
            ids.push_back(g.leaf(std::move(v)));
        }
        const auto root = build(g, ids);
        if (g.value(root).size() != 1)
            throw std::invalid_argument("grad_check: build must produce a scalar");
        if (auto bad = g.find_nonfinite())
            throw std::runtime_error("grad_check: non-finite intermediate at node " +
                                     std::to_string(bad->first) + " (op " + bad->second + ")");
        std::vector<std::vector<T>> grads;
        if (with_grad) {
            g.backward(root);
            for (auto id : ids) {
                std::vector<T> gr = g.grad(id);
                if (gr.empty()) gr.assign(g.value(id).data.size(), T(0));
                grads.push_back(std::move(gr));
            }
        }
        return {g.value(root).data[0], std::move(grads)};
    };

    auto [f0, analytic] = eval(inputs, true, nullptr);

    GradCheckReport<T> report;
    const double kink_tol =
        std::max(std::pow(static_cast<double>(eps), 1.5),
                 100.0 * static_cast<double>(eps) * static_cast<double>(eps) *
                     (1.0 + std::abs(static_cast<double>(f0))));
    for (size_t which = 0; which < inputs.size(); ++which) {
        for (size_t e = 0; e < inputs[which].data.size(); ++e) {
            const T saved = inputs[which].data[e];
            inputs[which].data[e] = saved + eps;
            const T fp = eval(inputs, false, nullptr).first;
            inputs[which].data[e] = saved - eps;
            const T fm = eval(inputs, false, nullptr).first;
            inputs[which].data[e] = saved;

            const double second = std::abs(static_cast<double>(fp) + static_cast<double>(fm) -
                                           2.0 * static_cast<double>(f0));
            if (second > kink_tol) {
                ++report.skipped;
                continue;
            }
            const double numeric = (static_cast<double>(fp) - static_cast<double>(fm)) /
                                   (2.0 * static_cast<double>(eps));
            const double a = static_cast<double>(analytic[which][e]);
            const double rel = std::abs(a - numeric) / (std::max(std::abs(a), std::abs(numeric)) + 1e-10);
            ++report.checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_input = static_cast<int>(which);
                report.worst_elem = static_cast<int64_t>(e);
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    return report;
}

}  // namespace dpfa
