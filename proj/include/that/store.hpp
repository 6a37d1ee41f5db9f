#pragma once

#include <optional>
#include <string>

#include "that/checkpoint.hpp"
#include "that/membank.hpp"
#include "that/model.hpp"

namespace that {

// Tensor names: "clean.<param>", "robust.<param>", "log_eta", and when a
// bank is present "bank.entries" plus "bank.state" = [cursor, fill].
// The descriptor is the architecture text followed by "head=<kind>".
Checkpoint to_checkpoint(const EncoderParams<float>& params,
                         const MemoryBank* bank = nullptr);

EncoderParams<float> params_from_checkpoint(const Checkpoint& ckpt);
std::optional<MemoryBank> bank_from_checkpoint(const Checkpoint& ckpt);

void save_model(const std::string& path, const EncoderParams<float>& params,
                const MemoryBank* bank = nullptr);
EncoderParams<float> load_model(const std::string& path);

HeadKind parse_head(const std::string& text);

}  // namespace that
