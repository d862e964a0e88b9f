#pragma once

#include "epicalib/metrics.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <vector>

namespace epicalib {

/// DAG over {x, S, I, Q, R, g}. Every compartment depends on x; `parents`
/// holds the compartment-to-compartment edges and `metric_edges` the
/// compartments feeding the metric sink g.
struct FunctionNetwork {
    std::array<std::vector<int>, 4> parents;
    CompartmentMask metric_edges{true, true, true, true};

    /// Pa(S) = {}, Pa(I) = {S}, Pa(Q) = {I}, Pa(R) = {I, Q}.
    static FunctionNetwork siqr();
    /// Named preset lookup ("siqr").
    static FunctionNetwork preset(const std::string& name);

    static FunctionNetwork from_json(const nlohmann::json& doc);
    nlohmann::json to_json() const;

    /// Throws DomainError on cycles, self loops or bad indices.
    void validate() const;
    std::vector<int> topological_order() const;
    /// Compartments with a directed path to g.
    std::array<bool, 4> metric_ancestors() const;
    std::array<bool, 4> descendants(int compartment) const;

    friend bool operator==(const FunctionNetwork&, const FunctionNetwork&) = default;
};

/// Keeps metric edges only for observed compartments; the compartment edges
/// are untouched. Throws EmptyMask when nothing is observed.
FunctionNetwork prune_metric_edges(const FunctionNetwork& net, const CompartmentMask& observed);

}  // namespace epicalib
