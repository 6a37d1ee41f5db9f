#include "that/store.hpp"

#include "that/strings.hpp"

namespace that {

HeadKind parse_head(const std::string& text) {
  if (text == "linear") return HeadKind::linear;
  if (text == "cosine") return HeadKind::cosine;
  fail(ErrorCode::config, "unknown head kind '" + text + "'");
}

Checkpoint to_checkpoint(const EncoderParams<float>& params,
                         const MemoryBank* bank) {
  Checkpoint c;
  c.descriptor = params.arch.to_text() + "head=" + to_string(params.head) + '\n';
  params.clean.visit([&](const std::string& name, const Tensor<float>& t) {
    c.add("clean." + name, t);
  });
  params.robust.visit([&](const std::string& name, const Tensor<float>& t) {
    c.add("robust." + name, t);
  });
  c.add("log_eta", Tensor<float>(Shape{1}, {params.log_eta}));
  if (bank != nullptr) {
    c.add("bank.entries", bank->entries());
    // Both counts stay far below 2^24, so float holds them exactly.
    c.add("bank.state", Tensor<float>(Shape{2}, {static_cast<float>(bank->cursor()),
                                                 static_cast<float>(bank->fill())}));
  }
  return c;
}

EncoderParams<float> params_from_checkpoint(const Checkpoint& ckpt) {
  EncoderParams<float> p;
  p.arch = ArchitectureConfig::parse(ckpt.descriptor);
  bool head_seen = false;
  for (const auto& [key, value] : parse_key_values(ckpt.descriptor)) {
    if (key == "head") {
      p.head = parse_head(value);
      head_seen = true;
    }
  }
  require(head_seen, ErrorCode::format, "checkpoint: descriptor lacks head=");
  // Shapes come from a freshly initialised model of the same architecture.
  Rng rng(0);
  const EncoderParams<float> shape_ref = init_params<float>(p.arch, rng);
  p.clean = shape_ref.clean;
  p.robust = shape_ref.robust;
  auto load = [&](const std::string& prefix) {
    return [&ckpt, prefix](const std::string& name, Tensor<float>& t) {
      const Tensor<float>& src = ckpt.at(prefix + name);
      if (src.shape() != t.shape())
        fail(ErrorCode::shape_mismatch,
             "checkpoint: tensor " + prefix + name + " has the wrong shape");
      t = src;
    };
  };
  p.clean.visit(load("clean."));
  p.robust.visit(load("robust."));
  const Tensor<float>& le = ckpt.at("log_eta");
  require(le.size() == 1, ErrorCode::shape_mismatch, "checkpoint: log_eta");
  p.log_eta = le[0];
  return p;
}

std::optional<MemoryBank> bank_from_checkpoint(const Checkpoint& ckpt) {
  const Tensor<float>* entries = ckpt.find("bank.entries");
  if (entries == nullptr) return std::nullopt;
  const Tensor<float>& state = ckpt.at("bank.state");
  require(state.size() == 2, ErrorCode::format, "checkpoint: bank.state");
  return MemoryBank::from_state(*entries, static_cast<std::size_t>(state[0]),
                                static_cast<std::size_t>(state[1]));
}

void save_model(const std::string& path, const EncoderParams<float>& params,
                const MemoryBank* bank) {
  write_checkpoint(path, to_checkpoint(params, bank));
}

EncoderParams<float> load_model(const std::string& path) {
  return params_from_checkpoint(read_checkpoint(path));
}

}  // namespace that
