#pragma once

#include "ncsim/codec.hpp"

#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace ncsim {

enum class ScheduleMode { Periodic, Jittered };

struct ScheduleSpec {
    ScheduleMode mode = ScheduleMode::Periodic;
    double T_m = 1.0;
    double T_M = 1.0;
    double T = 0.0;  ///< periodic gap; 0 selects T_m
    std::uint64_t seed = 0;

    bool operator==(const ScheduleSpec&) const = default;
};

/// Transmission instants t_k = t0 + steps[k] * h on the integration grid.
struct Schedule {
    ScheduleSpec spec;
    double t0 = 0.0;
    double h = 1.0;
    std::vector<long> steps;

    [[nodiscard]] std::size_t size() const noexcept { return steps.size(); }
    [[nodiscard]] double time(std::size_t k) const noexcept { return t0 + static_cast<double>(steps[k]) * h; }
    [[nodiscard]] std::vector<double> times() const;
};

/// Builds {t_k} within [t0, t0 + horizon]; gaps are whole multiples of h inside [T_m, T_M].
/// Throws ConfigError when T_m > T_M or when no grid multiple fits the gap range.
[[nodiscard]] Schedule generate_schedule(const ScheduleSpec& spec, double horizon, double h,
                                         double t0 = 0.0);

enum class DropKind { None, Pattern, Bernoulli };

struct DropSpec {
    DropKind kind = DropKind::None;
    std::vector<bool> pattern;  ///< true = drop, repeated with period pattern.size()
    double p = 0.0;
    std::uint64_t seed = 0;
    int max_consecutive = 1;  ///< cap D for the Bernoulli model

    bool operator==(const DropSpec&) const = default;
};

/// Largest run of consecutive drops the model can produce.
[[nodiscard]] int max_consecutive_drops(const DropSpec& spec);

enum class Delivery { Delivered, Dropped };

/// Deterministic drop decisions, queried in packet order.
class DropProcess {
public:
    explicit DropProcess(DropSpec spec);
    [[nodiscard]] Delivery next(std::uint32_t k);

private:
    DropSpec spec_;
    std::mt19937_64 rng_;
    int run_ = 0;
};

[[nodiscard]] Delivery apply_drop(DropProcess& process, const Packet& pkt);

struct PacketLogEntry {
    std::uint32_t k = 0;
    double t_sent = 0.0;
    std::optional<double> t_delivered;  ///< empty when dropped
    std::vector<std::int8_t> symbols;
    int bits = 0;
};

/// FIFO link with constant delay of delay_steps grid steps.
class ChannelModel {
public:
    ChannelModel(Schedule schedule, double theta, DropSpec drop);

    [[nodiscard]] const Schedule& schedule() const noexcept { return schedule_; }
    [[nodiscard]] double theta() const noexcept { return theta_; }
    [[nodiscard]] long delay_steps() const noexcept { return delay_steps_; }
    [[nodiscard]] const DropSpec& drop() const noexcept { return drop_; }

    /// Registers a transmission at grid step `step`; returns whether it will arrive.
    Delivery send(const Packet& pkt, long step);
    /// Pops every packet whose delivery step equals `step`, in send order.
    [[nodiscard]] std::vector<Packet> deliver(long step);
    [[nodiscard]] const std::vector<PacketLogEntry>& log() const noexcept { return log_; }
    void reset();

private:
    Schedule schedule_;
    double theta_;
    long delay_steps_;
    DropSpec drop_;
    DropProcess process_;
    std::deque<std::pair<Packet, long>> in_flight_;
    std::vector<PacketLogEntry> log_;
};

struct RateAccount {
    long bits_sent = 0;   ///< all packets in [t0, t_last]
    double t0 = 0.0;
    double t_last = 0.0;
    double R_av = 0.0;           ///< bits sent after t0 per unit time
    double R_av_inclusive = 0.0; ///< all bits including the packet at t0, per unit time
};

/// Throws InsufficientDataError for fewer than two packets.
[[nodiscard]] RateAccount measure_rate(const std::vector<PacketLogEntry>& log);

/// Writes k,t_sent,t_delivered,symbols,bits rows.
[[nodiscard]] std::string packet_log_csv(const std::vector<PacketLogEntry>& log);

}  // namespace ncsim
