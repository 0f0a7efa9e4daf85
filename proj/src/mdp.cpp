#include "mcr/mdp.hpp"
#include "mcr/util.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace mcr {

namespace {

struct Fnv {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    void bytes(const void* p, size_t n) {
        auto c = static_cast<const unsigned char*>(p);
        for (size_t i = 0; i < n; ++i) {
            h ^= c[i];
            h *= 0x100000001b3ULL;
        }
    }
    void mat(const Mat& m) {
        int r = static_cast<int>(m.rows()), c = static_cast<int>(m.cols());
        bytes(&r, sizeof r);
        bytes(&c, sizeof c);
        bytes(m.data(), sizeof(double) * m.size());
    }
};

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

} // namespace

Mdp::Mdp(std::vector<Mat> trans, Vec cost, Vec start, double discount, int horizon,
         int absorbing)
    : trans_(std::move(trans)), cost_(std::move(cost)), start_(std::move(start)),
      discount_(discount), horizon_(horizon), absorbing_(absorbing) {
    const int S = static_cast<int>(cost_.size());
    require(S > 0, "mdp: no states");
    require(!trans_.empty(), "mdp: no actions");
    require(start_.size() == S, "mdp: start distribution has wrong size");
    require(discount_ > 0.0 && discount_ <= 1.0, "mdp: discount must lie in (0, 1]");
    require(horizon_ >= 0, "mdp: negative horizon");
    require(discount_ < 1.0 || horizon_ > 0, "mdp: discount 1 requires a finite horizon");
    require(absorbing_ >= -1 && absorbing_ < S, "mdp: absorbing state out of range");
    require(cost_.allFinite(), "mdp: non-finite cost");
    for (const auto& m : trans_) {
        require(m.rows() == S && m.cols() == S, "mdp: transition matrix has wrong shape");
        require((m.array() >= 0.0).all(), "mdp: negative transition probability");
        for (int s = 0; s < S; ++s)
            require(std::abs(m.row(s).sum() - 1.0) <= 1e-12, "mdp: transition row does not sum to 1");
    }
    require((start_.array() >= 0.0).all() && std::abs(start_.sum() - 1.0) <= 1e-12,
            "mdp: start is not a distribution");
    if (absorbing_ >= 0)
        for (const auto& m : trans_)
            require(m(absorbing_, absorbing_) == 1.0, "mdp: terminal state is not absorbing");

    const int A = n_actions();
    succ_.resize(static_cast<size_t>(S) * A);
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a)
            for (int sp = 0; sp < S; ++sp)
                if (trans_[a](s, sp) > 0.0) succ_[static_cast<size_t>(s) * A + a].emplace_back(sp, trans_[a](s, sp));

    Fnv f;
    for (const auto& m : trans_) f.mat(m);
    f.mat(cost_);
    f.mat(start_);
    f.bytes(&discount_, sizeof discount_);
    f.bytes(&horizon_, sizeof horizon_);
    fingerprint_ = f.h;
}

Mdp Mdp::with_discount(double discount, int horizon) const {
    return Mdp(trans_, cost_, start_, discount, horizon, absorbing_);
}

Mdp Mdp::with_start(Vec start) const {
    return Mdp(trans_, cost_, std::move(start), discount_, horizon_, absorbing_);
}

Policy Policy::direct(Mat probs) {
    require(probs.size() > 0, "policy: empty table");
    require(probs.allFinite() && (probs.array() >= 0.0).all(), "policy: negative probability");
    for (int s = 0; s < probs.rows(); ++s)
        require(std::abs(probs.row(s).sum() - 1.0) <= 1e-10, "policy: row is not on the simplex");
    Mat table = probs;
    return Policy(Param::direct, std::move(probs), std::move(table));
}

Policy Policy::softmax(Mat logits) {
    require(logits.size() > 0, "policy: empty table");
    require(logits.allFinite(), "policy: non-finite logit");
    Mat table(logits.rows(), logits.cols());
    for (int s = 0; s < logits.rows(); ++s) {
        double m = logits.row(s).maxCoeff();
        table.row(s) = (logits.row(s).array() - m).exp();
        table.row(s) /= table.row(s).sum();
    }
    return Policy(Param::softmax, std::move(logits), std::move(table));
}

Policy Policy::uniform(int n_states, int n_actions, Param kind) {
    if (kind == Param::softmax) return softmax(Mat::Zero(n_states, n_actions));
    return direct(Mat::Constant(n_states, n_actions, 1.0 / n_actions));
}

std::uint64_t Policy::fingerprint() const {
    Fnv f;
    int k = static_cast<int>(kind_);
    f.bytes(&k, sizeof k);
    f.mat(params_);
    return f.h;
}

Mat induced_transition(const Mdp& mdp, const Policy& policy) {
    if (policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions())
        throw std::invalid_argument("induced_transition: policy dimensions do not match the mdp");
    const int S = mdp.n_states();
    Mat p = Mat::Zero(S, S);
    for (int a = 0; a < mdp.n_actions(); ++a)
        p += policy.table().col(a).asDiagonal() * mdp.transition(a);
    return p;
}

namespace {

Visitation with_support(Vec d) {
    Visitation v;
    v.support.resize(d.size());
    for (int s = 0; s < d.size(); ++s) v.support[s] = d[s] > 0.0;
    v.d = std::move(d);
    return v;
}

void check_chain(const Mat& p, const Vec& d0) {
    if (p.rows() != p.cols() || p.rows() != d0.size())
        throw std::invalid_argument("visitation: dimension mismatch");
}

} // namespace

Visitation discounted_visitation(const Mat& p_theta, const Vec& d0, double gamma) {
    check_chain(p_theta, d0);
    if (!(gamma > 0.0 && gamma < 1.0))
        throw std::invalid_argument("discounted_visitation: gamma must lie in (0, 1)");
    const int S = static_cast<int>(d0.size());
    Mat a = Mat::Identity(S, S) - gamma * p_theta.transpose();
    Vec d = a.partialPivLu().solve((1.0 - gamma) * d0);
    if (!d.allFinite()) throw std::runtime_error("discounted_visitation: singular system");
    // clip round-off negatives from unreachable states
    for (int s = 0; s < S; ++s)
        if (std::abs(d[s]) < 1e-300 || d[s] < 0.0) d[s] = std::max(0.0, d[s]);
    return with_support(std::move(d));
}

Visitation finite_visitation(const Mat& p_theta, const Vec& d0, int horizon) {
    check_chain(p_theta, d0);
    if (horizon < 1) throw std::invalid_argument("finite_visitation: horizon must be >= 1");
    Vec acc = Vec::Zero(d0.size());
    Vec cur = d0;
    for (int t = 0; t < horizon; ++t) {
        acc += cur;
        cur = p_theta.transpose() * cur;
    }
    return with_support(acc / horizon);
}

namespace {

Trajectory rollout(const Mdp& mdp, const Policy& policy, int horizon, std::uint64_t seed,
                   const SampleOptions& opts) {
    Rng rng(seed);
    Trajectory tr;
    tr.seed = seed;
    const int A = mdp.n_actions();
    int s = rng.categorical(mdp.start(), mdp.n_states());
    for (int t = 0; t < horizon; ++t) {
        if (opts.stop_at_absorbing && s == mdp.absorbing()) break;
        int a = rng.categorical(policy.table().row(s), A);
        tr.steps.push_back({s, a, mdp.cost()[s]});
        const auto& succ = mdp.successors(s, a);
        double u = rng.uniform(), acc = 0.0;
        int next = succ.back().first;
        for (const auto& [sp, p] : succ) {
            acc += p;
            if (u < acc) {
                next = sp;
                break;
            }
        }
        s = next;
    }
    tr.final_state = s;
    tr.unpadded_length = tr.length();
    if (opts.pad) pad(tr, mdp, horizon);
    return tr;
}

} // namespace

std::vector<Trajectory> sample_trajectories(const Mdp& mdp, const Policy& policy, int n,
                                            int horizon, std::uint64_t seed, SampleOptions opts) {
    if (horizon < 1) throw std::invalid_argument("sample_trajectories: horizon must be >= 1");
    if (policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions())
        throw std::invalid_argument("sample_trajectories: policy dimensions do not match the mdp");
    std::vector<Trajectory> out(std::max(n, 0));
    parallel_for(n, [&](int i) { out[i] = rollout(mdp, policy, horizon, derive_seed(seed, i), opts); });
    return out;
}

void pad(Trajectory& traj, const Mdp& mdp, int horizon) {
    if (traj.length() >= horizon) return;
    const int z = mdp.absorbing();
    if (z < 0) throw std::invalid_argument("pad: mdp has no absorbing state");
    if (traj.final_state != z) throw std::invalid_argument("pad: trajectory did not terminate");
    while (traj.length() < horizon) traj.steps.push_back({z, 0, mdp.cost()[z]});
}

Vec simplex_project(const Vec& v) {
    const int n = static_cast<int>(v.size());
    if (n == 0) throw std::invalid_argument("simplex_project: empty vector");
    if (!v.allFinite()) throw std::invalid_argument("simplex_project: non-finite entry");
    std::vector<double> u(v.data(), v.data() + n);
    std::sort(u.begin(), u.end(), std::greater<>());
    double cum = 0.0, tau = 0.0;
    for (int k = 0; k < n; ++k) {
        cum += u[k];
        double t = (cum - 1.0) / (k + 1);
        if (u[k] - t > 0.0) tau = t;
    }
    return (v.array() - tau).max(0.0).matrix();
}

std::string format_double(double x) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

namespace {

double parse_double(const std::string& tok) {
    double x = 0.0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), x);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
        throw std::invalid_argument("read_mdp: bad number '" + tok + "'");
    return x;
}

int parse_int(const std::string& tok) {
    int x = 0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), x);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
        throw std::invalid_argument("read_mdp: bad integer '" + tok + "'");
    return x;
}

} // namespace

void write_mdp(std::ostream& os, const Mdp& mdp) {
    const int S = mdp.n_states(), A = mdp.n_actions();
    os << "mcr-mdp 1\n";
    os << "states " << S << "\n";
    os << "actions " << A << "\n";
    os << "discount " << format_double(mdp.discount()) << "\n";
    os << "horizon " << mdp.horizon() << "\n";
    os << "absorbing " << mdp.absorbing() << "\n";
    for (int s = 0; s < S; ++s)
        if (mdp.start()[s] != 0.0) os << "start " << s << " " << format_double(mdp.start()[s]) << "\n";
    for (int s = 0; s < S; ++s) os << "cost " << s << " " << format_double(mdp.cost()[s]) << "\n";
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a)
            for (const auto& [sp, p] : mdp.successors(s, a))
                os << "T " << s << " " << a << " " << sp << " " << format_double(p) << "\n";
    os << "end\n";
}

Mdp read_mdp(std::istream& is) {
    std::string line;
    int S = -1, A = -1, horizon = 0, absorbing = -1;
    double discount = -1.0;
    Vec cost, start;
    std::vector<Mat> trans;
    bool header = false, done = false;
    auto sized = [&] {
        if (S <= 0 || A <= 0) throw std::invalid_argument("read_mdp: states/actions must precede data");
        if (trans.empty()) {
            trans.assign(A, Mat::Zero(S, S));
            cost = Vec::Zero(S);
            start = Vec::Zero(S);
        }
    };
    while (!done && std::getline(is, line)) {
        std::istringstream ls(line);
        std::string key;
        if (!(ls >> key) || key[0] == '#') continue;
        std::vector<std::string> tok;
        for (std::string t; ls >> t;) tok.push_back(t);
        auto need = [&](size_t n) {
            if (tok.size() != n) throw std::invalid_argument("read_mdp: malformed line '" + line + "'");
        };
        if (key == "mcr-mdp") {
            need(1);
            if (tok[0] != "1") throw std::invalid_argument("read_mdp: unsupported version");
            header = true;
        } else if (!header) {
            throw std::invalid_argument("read_mdp: missing header");
        } else if (key == "states") {
            need(1);
            S = parse_int(tok[0]);
        } else if (key == "actions") {
            need(1);
            A = parse_int(tok[0]);
        } else if (key == "discount") {
            need(1);
            discount = parse_double(tok[0]);
        } else if (key == "horizon") {
            need(1);
            horizon = parse_int(tok[0]);
        } else if (key == "absorbing") {
            need(1);
            absorbing = parse_int(tok[0]);
        } else if (key == "start" || key == "cost") {
            need(2);
            sized();
            int s = parse_int(tok[0]);
            if (s < 0 || s >= S) throw std::invalid_argument("read_mdp: state out of range");
            (key == "start" ? start : cost)[s] = parse_double(tok[1]);
        } else if (key == "T") {
            need(4);
            sized();
            int s = parse_int(tok[0]), a = parse_int(tok[1]), sp = parse_int(tok[2]);
            if (s < 0 || s >= S || sp < 0 || sp >= S || a < 0 || a >= A)
                throw std::invalid_argument("read_mdp: index out of range");
            trans[a](s, sp) = parse_double(tok[3]);
        } else if (key == "end") {
            done = true;
        } else {
            throw std::invalid_argument("read_mdp: unknown key '" + key + "'");
        }
    }
    if (!done) throw std::invalid_argument("read_mdp: missing end marker");
    sized();
    return Mdp(std::move(trans), std::move(cost), std::move(start), discount, horizon, absorbing);
}

} // namespace mcr
