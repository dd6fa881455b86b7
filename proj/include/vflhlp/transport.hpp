#pragma once

#include <bit>
#include <cstdint>
#include <deque>
#include <map>
#include <vector>

#include "vflhlp/common.hpp"
#include "vflhlp/matrix.hpp"

namespace vflhlp {

enum class Direction : std::uint8_t { upstream = 0, downstream = 1 };
enum class MessageKind : std::uint8_t { representation = 1, gradient = 2 };

/// r^k for one batch, party -> server. Carries no features, labels or weights.
struct RepresentationMsg {
    std::uint8_t party = 0;  // 1-based
    std::uint32_t round = 0;
    Matrix values;  // batch x rep_dim
};

/// d L / d r^k for one batch, server -> party.
struct GradientMsg {
    std::uint8_t party = 0;
    std::uint32_t round = 0;
    Matrix values;
};

struct TransportRecord {
    std::uint32_t round = 0;
    Direction direction = Direction::upstream;
    std::uint8_t party = 0;
    MessageKind kind = MessageKind::representation;
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::uint64_t content_hash = 0;  // FNV-1a of the row-major float64 payload

    friend bool operator==(const TransportRecord&, const TransportRecord&) = default;
};

using TransportLog = std::vector<TransportRecord>;

/// Decoded wire frame.
struct WireMessage {
    std::uint32_t round = 0;
    Direction direction = Direction::upstream;
    std::uint8_t party = 0;
    MessageKind kind = MessageKind::representation;
    Matrix values;

    friend bool operator==(const WireMessage&, const WireMessage&) = default;
};

namespace detail {

inline void put_u32(std::vector<std::byte>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(std::span<const std::byte> in, std::size_t& pos) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[pos++]) << (8 * i);
    return v;
}

}  // namespace detail

/// Little-endian frame: u32 round, u8 direction, u8 party, u8 kind,
/// u32 rows, u32 cols, rows*cols float64 values in row-major order.
inline std::vector<std::byte> encode_wire(const WireMessage& m) {
    std::vector<std::byte> out;
    out.reserve(15 + 8 * m.values.size());
    detail::put_u32(out, m.round);
    out.push_back(static_cast<std::byte>(m.direction));
    out.push_back(static_cast<std::byte>(m.party));
    out.push_back(static_cast<std::byte>(m.kind));
    detail::put_u32(out, static_cast<std::uint32_t>(m.values.rows()));
    detail::put_u32(out, static_cast<std::uint32_t>(m.values.cols()));
    for (double v : m.values.values()) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::byte>((bits >> (8 * i)) & 0xff));
    }
    return out;
}

inline WireMessage decode_wire(std::span<const std::byte> in) {
    if (in.size() < 15) throw DataError("wire frame shorter than its header");
    std::size_t pos = 0;
    WireMessage m;
    m.round = detail::get_u32(in, pos);
    const auto dir = static_cast<std::uint8_t>(in[pos++]);
    m.party = static_cast<std::uint8_t>(in[pos++]);
    const auto kind = static_cast<std::uint8_t>(in[pos++]);
    if (dir > 1) throw DataError("wire frame: bad direction");
    if (kind != 1 && kind != 2) throw DataError("wire frame: bad message kind");
    m.direction = static_cast<Direction>(dir);
    m.kind = static_cast<MessageKind>(kind);
    const std::uint32_t rows = detail::get_u32(in, pos);
    const std::uint32_t cols = detail::get_u32(in, pos);
    if (in.size() != 15 + 8ULL * rows * cols) throw DataError("wire frame: payload size mismatch");
    m.values = Matrix(rows, cols);
    for (double& v : m.values.values()) {
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(in[pos++]) << (8 * i);
        v = std::bit_cast<double>(bits);
    }
    return m;
}

/// In-process channel between K parties and the server: FIFO per
/// party/server pair and direction, every message logged on send.
class Transport {
public:
    void send(RepresentationMsg msg) {
        record(msg.round, Direction::upstream, msg.party, MessageKind::representation, msg.values);
        upstream_[msg.party].push_back(std::move(msg));
    }

    void send(GradientMsg msg) {
        record(msg.round, Direction::downstream, msg.party, MessageKind::gradient, msg.values);
        downstream_[msg.party].push_back(std::move(msg));
    }

    RepresentationMsg receive_representation(std::uint8_t party) {
        auto& q = upstream_[party];
        if (q.empty()) throw TrainingError("server is missing the representation of party " + std::to_string(party));
        RepresentationMsg m = std::move(q.front());
        q.pop_front();
        return m;
    }

    GradientMsg receive_gradient(std::uint8_t party) {
        auto& q = downstream_[party];
        if (q.empty()) throw TrainingError("party " + std::to_string(party) + " is missing its gradient message");
        GradientMsg m = std::move(q.front());
        q.pop_front();
        return m;
    }

    const TransportLog& log() const { return log_; }
    TransportLog take_log() { return std::move(log_); }

private:
    void record(std::uint32_t round, Direction dir, std::uint8_t party, MessageKind kind, const Matrix& values) {
        log_.push_back({round, dir, party, kind, static_cast<std::uint32_t>(values.rows()),
                        static_cast<std::uint32_t>(values.cols()), fnv1a(values.values())});
    }

    std::map<std::uint8_t, std::deque<RepresentationMsg>> upstream_;
    std::map<std::uint8_t, std::deque<GradientMsg>> downstream_;
    TransportLog log_;
};

}  // namespace vflhlp
