#include "epicalib/surrogate.hpp"

#include "epicalib/errors.hpp"
#include "epicalib/optim.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>

namespace epicalib {

MetricTarget MetricTarget::from(const ObservationSet& obs) {
    obs.validate();
    MetricTarget t;
    t.points = obs.observed_points();
    const auto T = static_cast<Eigen::Index>(t.points.size());
    t.data = Eigen::MatrixXd::Zero(T, 4);
    t.weight = Eigen::MatrixXd::Zero(T, 4);
    for (Eigen::Index k = 0; k < T; ++k)
        for (int c = 0; c < kCompartmentCount; ++c)
            if (obs.observed(t.points[static_cast<std::size_t>(k)], c)) {
                t.data(k, c) = obs.value(t.points[static_cast<std::size_t>(k)], c);
                t.weight(k, c) = 1.0 / static_cast<double>(T);
            }
    return t;
}

CompartmentMask MetricTarget::observed() const {
    CompartmentMask m{};
    for (int c = 0; c < kCompartmentCount; ++c) m[static_cast<std::size_t>(c)] = (weight.col(c).array() > 0.0).any();
    return m;
}

double MetricTarget::evaluate(const Eigen::MatrixXd& values) const {
    double g = 0.0;
    for (Eigen::Index k = 0; k < size(); ++k)
        for (int c = 0; c < kCompartmentCount; ++c)
            if (weight(k, c) > 0.0) {
                const double r = data(k, c) - values(k, c);
                g -= weight(k, c) * r * r;
            }
    return g;
}

Eigen::MatrixXd MetricTarget::extract(const Trajectory& traj) const {
    Eigen::MatrixXd out(size(), 4);
    for (Eigen::Index k = 0; k < size(); ++k) {
        const auto p = static_cast<std::size_t>(points[static_cast<std::size_t>(k)]);
        if (p >= traj.states.size()) throw GridMismatch("trajectory is shorter than the observation grid");
        for (int c = 0; c < kCompartmentCount; ++c) out(k, c) = traj.states[p][c];
    }
    return out;
}

NetworkSurrogate NetworkSurrogate::fit(const std::vector<HistoryEntry>& history, const FunctionNetwork& net,
                                       SurrogateMode mode, const MetricTarget& target, const NetworkFitOptions& opts) {
    if (history.size() < 2) throw DomainError("fitting the network needs at least two history entries");
    net.validate();
    NetworkSurrogate s;
    s.mode_ = mode;
    s.net_ = prune_metric_edges(net, target.observed());
    s.dim_ = history.front().x.size();
    s.points_ = target.points;
    const auto n = static_cast<Eigen::Index>(history.size());
    const Eigen::Index T = target.size();
    const Eigen::Index D = s.dim_;

    Eigen::MatrixXd X(n, D);
    std::vector<Eigen::MatrixXd> values;  // per entry, T x 4
    values.reserve(history.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& h = history[static_cast<std::size_t>(i)];
        if (h.x.size() != D) throw DomainError("history entries have inconsistent dimensions");
        X.row(i) = h.x.transpose();
        values.push_back(target.extract(h.trajectory));
    }

    const auto modeled = mode == SurrogateMode::CompositeOnly ? s.net_.metric_edges : s.net_.metric_ancestors();
    for (int c : s.net_.topological_order()) {
        if (!modeled[static_cast<std::size_t>(c)]) continue;
        CompartmentModel m;
        m.compartment = c;
        if (mode == SurrogateMode::FullNetwork) m.parents = s.net_.parents[static_cast<std::size_t>(c)];
        gp::FitOptions fo = opts.gp;
        fo.seed = mix_seed(opts.gp.seed, static_cast<std::uint64_t>(c));
        fo.warm_start = opts.warm_start[static_cast<std::size_t>(c)];
        if (fo.warm_start && fo.warm_start->size() != D + static_cast<Eigen::Index>(m.parents.size()))
            fo.warm_start.reset();

        if (!m.has_parents()) {
            Eigen::MatrixXd Y(n, T);
            for (Eigen::Index i = 0; i < n; ++i) Y.row(i) = values[static_cast<std::size_t>(i)].col(c).transpose();
            m.gps.push_back(gp::GaussianProcess::fit(X, Y, fo, gp::InputScaling::identity(D)));
            m.log_lengthscales = m.gps.front().normalized_hyper().lengthscales.array().log();
        } else {
            const auto p = static_cast<Eigen::Index>(m.parents.size());
            std::vector<gp::InputScaling> scalings;
            std::vector<gp::OutputScaling> out_scalings;
            std::vector<Eigen::MatrixXd> inputs, targets;
            std::vector<gp::PooledDataset> sets;
            for (Eigen::Index k = 0; k < T; ++k) {
                Eigen::MatrixXd Z(n, D + p);
                Z.leftCols(D) = X;
                for (Eigen::Index i = 0; i < n; ++i)
                    for (Eigen::Index j = 0; j < p; ++j)
                        Z(i, D + j) = values[static_cast<std::size_t>(i)](k, m.parents[static_cast<std::size_t>(j)]);
                gp::InputScaling in = gp::InputScaling::identity(D + p);
                const gp::InputScaling range = gp::InputScaling::from_data(Z.rightCols(p));
                in.lower.tail(p) = range.lower;
                in.width.tail(p) = range.width;
                Eigen::MatrixXd Y(n, 1);
                for (Eigen::Index i = 0; i < n; ++i) Y(i, 0) = values[static_cast<std::size_t>(i)](k, c);
                gp::OutputScaling out = gp::OutputScaling::standardize(Y);
                if (!out.degenerate(0)) {
                    gp::PooledDataset ds;
                    ds.inputs.resize(n, D + p);
                    for (Eigen::Index i = 0; i < n; ++i)
                        ds.inputs.row(i) = ((Z.row(i).transpose() - in.lower).cwiseQuotient(in.width)).transpose();
                    ds.targets = (Y.array() - out.shift(0)) / out.scale(0);
                    sets.push_back(std::move(ds));
                }
                scalings.push_back(std::move(in));
                out_scalings.push_back(std::move(out));
                inputs.push_back(std::move(Z));
                targets.push_back(std::move(Y));
            }
            const gp::PooledFit pooled = gp::fit_pooled(sets, D + p, fo);
            for (Eigen::Index k = 0; k < T; ++k) {
                const auto kk = static_cast<std::size_t>(k);
                m.gps.emplace_back(std::move(inputs[kk]), std::move(targets[kk]), std::move(scalings[kk]),
                                   std::move(out_scalings[kk]), pooled.hyper, fo.max_jitter);
            }
            m.log_lengthscales = pooled.hyper.lengthscales.array().log();
        }
        s.models_.push_back(std::move(m));
    }
    return s;
}

const CompartmentModel* NetworkSurrogate::model_of(int compartment) const {
    for (const auto& m : models_)
        if (m.compartment == compartment) return &m;
    return nullptr;
}

std::array<std::optional<Eigen::VectorXd>, 4> NetworkSurrogate::warm_starts() const {
    std::array<std::optional<Eigen::VectorXd>, 4> out;
    for (const auto& m : models_) out[static_cast<std::size_t>(m.compartment)] = m.log_lengthscales;
    return out;
}

Eigen::MatrixXd NetworkSurrogate::sample(const Eigen::VectorXd& x, const Eigen::MatrixXd& epsilon) const {
    const Eigen::Index T = time_points();
    if (epsilon.rows() != T || epsilon.cols() != 4)
        throw DomainError(fmt::format("epsilon block must be {} x 4", T));
    if (x.size() != dim_) throw DomainError("query dimension mismatch");
    Eigen::MatrixXd y = Eigen::MatrixXd::Constant(T, 4, std::numeric_limits<double>::quiet_NaN());
    for (const auto& m : models_) {
        const int c = m.compartment;
        if (!m.has_parents()) {
            const auto& gp = m.gps.front();
            gp::QueryTerms t;
            gp.query_terms(x, false, t);
            for (Eigen::Index k = 0; k < T; ++k) {
                const double mean = gp.raw_mean(gp.standardized_mean(t, k), k);
                const double var = gp.raw_variance_factor(k) * t.var_norm;
                y(k, c) = mean + std::sqrt(var) * epsilon(k, c);
            }
            continue;
        }
        const auto p = static_cast<Eigen::Index>(m.parents.size());
        Eigen::VectorXd q(dim_ + p);
        q.head(dim_) = x;
        for (Eigen::Index k = 0; k < T; ++k) {
            for (Eigen::Index j = 0; j < p; ++j) q(dim_ + j) = y(k, m.parents[static_cast<std::size_t>(j)]);
            y(k, c) = m.gps[static_cast<std::size_t>(k)].sample_reparam(q, epsilon(k, c));
        }
    }
    return y;
}

double NetworkSurrogate::expected_metric(const MetricTarget& target, const Eigen::VectorXd& x,
                                         const std::vector<Eigen::MatrixXd>& epsilon_blocks) const {
    if (epsilon_blocks.empty()) throw DomainError("expected_metric needs at least one epsilon block");
    double sum = 0.0;
    for (const auto& eps : epsilon_blocks) sum += target.evaluate(sample(x, eps));
    return sum / static_cast<double>(epsilon_blocks.size());
}

}  // namespace epicalib
