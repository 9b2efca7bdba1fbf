#pragma once

// Single-frame OBD-II request/response payloads (ISO 15765-4 style).

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "frame.hpp"

namespace canid::obd {

inline constexpr std::uint32_t kFunctionalRequestId = 0x7DF;
inline constexpr std::uint32_t kResponderId = 0x7E8;
inline constexpr std::uint8_t kPadByte = 0x55;
inline constexpr std::uint8_t kModeCurrentData = 0x01;
inline constexpr std::uint8_t kResponseOffset = 0x40;

inline constexpr std::uint8_t kPidEngineRpm = 0x0C;
inline constexpr std::uint8_t kPidVehicleSpeed = 0x0D;

struct ObdRequest {
    std::uint8_t mode = kModeCurrentData;
    std::uint8_t pid = 0;
    friend bool operator==(const ObdRequest&, const ObdRequest&) = default;
};

struct ObdResponse {
    std::uint8_t mode_echo = 0;
    std::uint8_t pid = 0;
    std::vector<std::uint8_t> value_bytes;
    /// RPM for 0x0C, km/h for 0x0D; empty for PIDs without a decoder.
    std::optional<double> decoded_value;

    std::uint8_t request_mode() const { return static_cast<std::uint8_t>(mode_echo - kResponseOffset); }
};

inline CanFrame encode_obd_request(const ObdRequest& req, Timestamp ts = {}, std::string channel = "can0") {
    CanFrame f;
    f.timestamp = ts;
    f.channel = std::move(channel);
    f.arb_id = kFunctionalRequestId;
    f.dlc = 8;
    f.bytes = {0x02, req.mode, req.pid, kPadByte, kPadByte, kPadByte, kPadByte, kPadByte};
    return f;
}

/// Recognizes a functional single-frame query; nullopt for anything else.
inline std::optional<ObdRequest> decode_obd_request(const CanFrame& f) {
    if (f.arb_id != kFunctionalRequestId || f.is_extended || f.is_remote || f.dlc < 3) return std::nullopt;
    if (f.bytes[0] != 0x02) return std::nullopt;
    return ObdRequest{f.bytes[1], f.bytes[2]};
}

inline std::optional<double> decode_pid_value(std::uint8_t pid, const std::vector<std::uint8_t>& v) {
    switch (pid) {
        case kPidEngineRpm:
            if (v.size() < 2) return std::nullopt;
            return (256.0 * v[0] + v[1]) / 4.0;
        case kPidVehicleSpeed:
            if (v.empty()) return std::nullopt;
            return static_cast<double>(v[0]);
        default:
            return std::nullopt;
    }
}

inline ObdResponse decode_obd_response(const CanFrame& f) {
    if (f.arb_id != kResponderId || f.is_extended)
        throw DataError("OBD-II response expected on 0x7E8, got 0x" + format_id_data(f));
    if (f.dlc < 3) throw DataError("OBD-II response too short");
    std::uint8_t len = f.bytes[0];
    if (len < 2 || static_cast<std::size_t>(len) + 1 > f.dlc)
        throw DataError("OBD-II length byte " + std::to_string(len) + " inconsistent with payload");
    if (f.bytes[1] < kResponseOffset) throw DataError("OBD-II response mode byte lacks the 0x40 echo bit");
    ObdResponse r;
    r.mode_echo = f.bytes[1];
    r.pid = f.bytes[2];
    r.value_bytes.assign(f.bytes.begin() + 3, f.bytes.begin() + 1 + len);
    r.decoded_value = decode_pid_value(r.pid, r.value_bytes);
    return r;
}

/// Builds the ECU's single-frame reply; remaining bytes are padded with 0x55.
inline CanFrame encode_obd_response(std::uint8_t mode, std::uint8_t pid, const std::vector<std::uint8_t>& value,
                                    Timestamp ts = {}, std::string channel = "can0") {
    if (value.size() > 5) throw DataError("OBD-II single-frame value longer than 5 bytes");
    CanFrame f;
    f.timestamp = ts;
    f.channel = std::move(channel);
    f.arb_id = kResponderId;
    f.dlc = 8;
    f.bytes.fill(kPadByte);
    f.bytes[0] = static_cast<std::uint8_t>(2 + value.size());
    f.bytes[1] = static_cast<std::uint8_t>(mode + kResponseOffset);
    f.bytes[2] = pid;
    std::copy(value.begin(), value.end(), f.bytes.begin() + 3);
    return f;
}

}  // namespace canid::obd
