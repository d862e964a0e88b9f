#include "epicalib/network.hpp"

#include "epicalib/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <functional>
#include <set>
#include <stdexcept>

namespace epicalib {
namespace {

int node_index(const std::string& name) {
    for (int c = 0; c < kCompartmentCount; ++c)
        if (compartment_name(c) == name) return c;
    if (name == "x") return -1;
    if (name == "g") return 4;
    throw DomainError(fmt::format("unknown network node '{}'", name));
}

std::string node_name(int index) {
    if (index == -1) return "x";
    if (index == 4) return "g";
    return std::string(compartment_name(index));
}

}  // namespace

FunctionNetwork FunctionNetwork::siqr() {
    FunctionNetwork net;
    net.parents[0] = {};
    net.parents[1] = {0};
    net.parents[2] = {1};
    net.parents[3] = {1, 2};
    return net;
}

FunctionNetwork FunctionNetwork::preset(const std::string& name) {
    if (name == "siqr") return siqr();
    throw DomainError(fmt::format("unknown network preset '{}'", name));
}

FunctionNetwork FunctionNetwork::from_json(const nlohmann::json& doc) {
    if (doc.is_string()) return preset(doc.get<std::string>());
    if (doc.contains("preset")) return preset(doc.at("preset").get<std::string>());
    FunctionNetwork net;
    net.metric_edges = {false, false, false, false};
    std::set<std::string> nodes;
    for (const auto& n : doc.at("nodes")) nodes.insert(n.get<std::string>());
    for (const char* required : {"x", "S", "I", "Q", "R", "g"})
        if (!nodes.count(required)) throw DomainError(fmt::format("network is missing node '{}'", required));
    for (const auto& e : doc.at("edges")) {
        if (!e.is_array() || e.size() != 2) throw DomainError("network edges must be [from, to] pairs");
        const int from = node_index(e[0].get<std::string>());
        const int to = node_index(e[1].get<std::string>());
        if (to == -1) throw DomainError("x cannot have parents");
        if (from == 4) throw DomainError("g cannot have children");
        if (from == -1) continue;  // x feeds every compartment implicitly
        if (to == 4) {
            net.metric_edges[static_cast<std::size_t>(from)] = true;
        } else {
            auto& pa = net.parents[static_cast<std::size_t>(to)];
            if (std::find(pa.begin(), pa.end(), from) == pa.end()) pa.push_back(from);
        }
    }
    for (auto& pa : net.parents) std::sort(pa.begin(), pa.end());
    net.validate();
    return net;
}

nlohmann::json FunctionNetwork::to_json() const {
    nlohmann::json doc;
    doc["nodes"] = {"x", "S", "I", "Q", "R", "g"};
    doc["edges"] = nlohmann::json::array();
    for (int c = 0; c < kCompartmentCount; ++c) doc["edges"].push_back({"x", node_name(c)});
    for (int c = 0; c < kCompartmentCount; ++c)
        for (int p : parents[static_cast<std::size_t>(c)]) doc["edges"].push_back({node_name(p), node_name(c)});
    for (int c = 0; c < kCompartmentCount; ++c)
        if (metric_edges[static_cast<std::size_t>(c)]) doc["edges"].push_back({node_name(c), "g"});
    return doc;
}

void FunctionNetwork::validate() const {
    for (int c = 0; c < kCompartmentCount; ++c)
        for (int p : parents[static_cast<std::size_t>(c)]) {
            if (p < 0 || p >= kCompartmentCount) throw DomainError("parent index out of range");
            if (p == c) throw DomainError(fmt::format("self loop on {}", node_name(c)));
        }
    (void)topological_order();
}

std::vector<int> FunctionNetwork::topological_order() const {
    std::vector<int> order;
    std::array<int, 4> state{};  // 0 new, 1 visiting, 2 done
    std::function<void(int)> visit = [&](int c) {
        auto& s = state[static_cast<std::size_t>(c)];
        if (s == 2) return;
        if (s == 1) throw DomainError("function network contains a cycle");
        s = 1;
        for (int p : parents[static_cast<std::size_t>(c)]) visit(p);
        s = 2;
        order.push_back(c);
    };
    for (int c = 0; c < kCompartmentCount; ++c) visit(c);
    return order;
}

std::array<bool, 4> FunctionNetwork::descendants(int compartment) const {
    std::array<bool, 4> out{};
    bool changed = true;
    while (changed) {
        changed = false;
        for (int c = 0; c < kCompartmentCount; ++c) {
            if (out[static_cast<std::size_t>(c)]) continue;
            for (int p : parents[static_cast<std::size_t>(c)])
                if (p == compartment || out[static_cast<std::size_t>(p)]) {
                    out[static_cast<std::size_t>(c)] = true;
                    changed = true;
                    break;
                }
        }
    }
    return out;
}

std::array<bool, 4> FunctionNetwork::metric_ancestors() const {
    std::array<bool, 4> out{};
    for (int c = 0; c < kCompartmentCount; ++c) {
        if (metric_edges[static_cast<std::size_t>(c)]) {
            out[static_cast<std::size_t>(c)] = true;
            continue;
        }
        const auto desc = descendants(c);
        for (int k = 0; k < kCompartmentCount; ++k)
            if (desc[static_cast<std::size_t>(k)] && metric_edges[static_cast<std::size_t>(k)])
                out[static_cast<std::size_t>(c)] = true;
    }
    return out;
}

FunctionNetwork prune_metric_edges(const FunctionNetwork& net, const CompartmentMask& observed) {
    if (std::none_of(observed.begin(), observed.end(), [](bool b) { return b; }))
        throw EmptyMask("no compartment observed");
    FunctionNetwork out = net;
    for (std::size_t c = 0; c < 4; ++c) out.metric_edges[c] = net.metric_edges[c] && observed[c];
    // A compartment that lost its metric edge must stay an ancestor of g
    // whenever one of its descendants still feeds g.
    const auto anc = out.metric_ancestors();
    for (int c = 0; c < kCompartmentCount; ++c) {
        const auto desc = out.descendants(c);
        for (int k = 0; k < kCompartmentCount; ++k)
            if (desc[static_cast<std::size_t>(k)] && out.metric_edges[static_cast<std::size_t>(k)] &&
                !anc[static_cast<std::size_t>(c)])
                throw std::logic_error("metric pruning broke an ancestor relation");
    }
    return out;
}

}  // namespace epicalib
