#include "ncsim/channel.hpp"

#include "ncsim/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ncsim {

namespace {

constexpr double kGridTol = 1e-9;

long grid_steps(double value, double h, const char* what) {
    const double q = value / h;
    const double r = std::round(q);
    if (std::abs(q - r) > kGridTol * std::max(1.0, std::abs(q)))
        throw ConfigError(std::string(what) + " is not a whole multiple of the step h");
    return static_cast<long>(r);
}

}  // namespace

std::vector<double> Schedule::times() const {
    std::vector<double> t(steps.size());
    for (std::size_t k = 0; k < steps.size(); ++k) t[k] = time(k);
    return t;
}

Schedule generate_schedule(const ScheduleSpec& spec, double horizon, double h, double t0) {
    if (!(spec.T_m > 0.0) || !(spec.T_M > 0.0)) throw ConfigError("channel.T_m and channel.T_M must be positive");
    if (spec.T_m > spec.T_M) throw ConfigError("channel.T_m exceeds channel.T_M");
    if (!(h > 0.0)) throw ConfigError("sim.h must be positive");
    if (!(horizon >= 0.0)) throw ConfigError("sim.horizon must be nonnegative");

    Schedule s{spec, t0, h, {}};
    const long last = static_cast<long>(std::floor(horizon / h + kGridTol));
    if (spec.mode == ScheduleMode::Periodic) {
        const double T = spec.T > 0.0 ? spec.T : spec.T_m;
        if (T < spec.T_m || T > spec.T_M) throw ConfigError("channel.T lies outside [T_m, T_M]");
        const long gap = grid_steps(T, h, "channel.T");
        for (long step = 0; step <= last; step += gap) s.steps.push_back(step);
        return s;
    }
    const long lo = static_cast<long>(std::ceil(spec.T_m / h - kGridTol));
    const long hi = static_cast<long>(std::floor(spec.T_M / h + kGridTol));
    if (lo > hi || lo < 1) throw ConfigError("no grid multiple of h lies in [T_m, T_M]");
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> gap_dist(spec.T_m, spec.T_M);
    for (long step = 0; step <= last;) {
        s.steps.push_back(step);
        step += std::clamp(static_cast<long>(std::llround(gap_dist(rng) / h)), lo, hi);
    }
    return s;
}

int max_consecutive_drops(const DropSpec& spec) {
    switch (spec.kind) {
        case DropKind::None: return 0;
        case DropKind::Bernoulli: return spec.p > 0.0 ? spec.max_consecutive : 0;
        case DropKind::Pattern: {
            const std::size_t P = spec.pattern.size();
            if (P == 0) return 0;
            if (std::all_of(spec.pattern.begin(), spec.pattern.end(), [](bool b) { return b; }))
                throw ConfigError("channel.drop_pattern drops every packet");
            int best = 0, run = 0;
            for (std::size_t i = 0; i < 2 * P; ++i) {
                run = spec.pattern[i % P] ? run + 1 : 0;
                best = std::max(best, run);
            }
            return best;
        }
    }
    return 0;
}

DropProcess::DropProcess(DropSpec spec) : spec_(std::move(spec)), rng_(spec_.seed) {
    if (spec_.kind == DropKind::Bernoulli) {
        if (!(spec_.p >= 0.0 && spec_.p < 1.0)) throw ConfigError("channel.drop_p must lie in [0, 1)");
        if (spec_.max_consecutive < 0) throw ConfigError("channel.drop_max_consecutive must be >= 0");
    }
    if (spec_.kind == DropKind::Pattern) (void)max_consecutive_drops(spec_);
}

Delivery DropProcess::next(std::uint32_t k) {
    bool drop = false;
    switch (spec_.kind) {
        case DropKind::None: break;
        case DropKind::Pattern:
            drop = !spec_.pattern.empty() && spec_.pattern[k % spec_.pattern.size()];
            break;
        case DropKind::Bernoulli: {
            const double draw = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
            drop = draw < spec_.p && run_ < spec_.max_consecutive;
            break;
        }
    }
    run_ = drop ? run_ + 1 : 0;
    return drop ? Delivery::Dropped : Delivery::Delivered;
}

Delivery apply_drop(DropProcess& process, const Packet& pkt) { return process.next(pkt.k); }

ChannelModel::ChannelModel(Schedule schedule, double theta, DropSpec drop)
    : schedule_(std::move(schedule)), theta_(theta),
      delay_steps_(grid_steps(theta, schedule_.h, "channel.theta")), drop_(drop), process_(drop) {
    if (!(theta >= 0.0)) throw ConfigError("channel.theta must be nonnegative");
}

Delivery ChannelModel::send(const Packet& pkt, long step) {
    const Delivery d = apply_drop(process_, pkt);
    PacketLogEntry entry{pkt.k, pkt.t_sent, std::nullopt, pkt.symbols,
                         packet_bits(static_cast<int>(pkt.symbols.size()))};
    if (d == Delivery::Delivered) {
        entry.t_delivered = schedule_.t0 + static_cast<double>(step + delay_steps_) * schedule_.h;
        in_flight_.emplace_back(pkt, step + delay_steps_);
    }
    log_.push_back(std::move(entry));
    return d;
}

std::vector<Packet> ChannelModel::deliver(long step) {
    std::vector<Packet> out;
    while (!in_flight_.empty() && in_flight_.front().second <= step) {
        if (in_flight_.front().second < step) throw ProtocolError("packet delivery step was skipped");
        out.push_back(std::move(in_flight_.front().first));
        in_flight_.pop_front();
    }
    return out;
}

void ChannelModel::reset() {
    process_ = DropProcess(drop_);
    in_flight_.clear();
    log_.clear();
}

RateAccount measure_rate(const std::vector<PacketLogEntry>& log) {
    if (log.size() < 2) throw InsufficientDataError("rate needs at least two packets");
    RateAccount acc;
    acc.t0 = log.front().t_sent;
    acc.t_last = log.back().t_sent;
    long after = 0;
    for (std::size_t j = 0; j < log.size(); ++j) {
        acc.bits_sent += log[j].bits;
        if (j > 0) after += log[j].bits;
    }
    const double span = acc.t_last - acc.t0;
    if (!(span > 0.0)) throw InsufficientDataError("packets span zero time");
    acc.R_av = static_cast<double>(after) / span;
    acc.R_av_inclusive = static_cast<double>(acc.bits_sent) / span;
    return acc;
}

std::string packet_log_csv(const std::vector<PacketLogEntry>& log) {
    std::ostringstream os;
    os.precision(17);
    os << "k,t_sent,t_delivered,symbols,bits\n";
    for (const auto& e : log) {
        os << e.k << ',' << e.t_sent << ',';
        if (e.t_delivered) os << *e.t_delivered;
        else os << "dropped";
        os << ',';
        for (std::size_t j = 0; j < e.symbols.size(); ++j) {
            if (j) os << ' ';
            os << static_cast<int>(e.symbols[j]);
        }
        os << ',' << e.bits << '\n';
    }
    return os.str();
}

}  // namespace ncsim
