#include "zodiac/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "zodiac/config_io.hpp"
#include "zodiac/errors.hpp"

namespace zodiac {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'Z', 'D', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <class T>
T get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw ContractError("checkpoint truncated");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(T);
  return v;
}

void put_doubles(std::string& out, std::span<const double> xs) {
  for (double x : xs) put_le(out, std::bit_cast<std::uint64_t>(x));
}

std::vector<double> get_doubles(const std::string& in, std::size_t& pos, std::size_t n) {
  if (n > (in.size() - pos) / 8) throw ContractError("checkpoint truncated");
  std::vector<double> xs(n);
  for (auto& x : xs) x = std::bit_cast<double>(get_le<std::uint64_t>(in, pos));
  return xs;
}

// Doubles in the log go through the binary payload so they round-trip exactly.
std::vector<double> record_doubles(const EpochRecord& r) {
  return {r.lr, r.train_loss, r.eval.token_accuracy, r.eval.exact_match, r.eval.cross_entropy};
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  json header;
  header["model"] = json::parse(to_json_string(ck.model));
  if (ck.train_config) header["train"] = json::parse(to_json_string(*ck.train_config));
  if (ck.task) header["task"] = json::parse(to_json_string(*ck.task));
  json tensors = json::array();
  for (const auto& [name, t] : ck.params) tensors.push_back({{"name", name}, {"shape", t.shape()}});
  header["tensors"] = tensors;
  if (ck.state) {
    const auto& s = *ck.state;
    json log = json::array();
    for (const auto& r : s.log) log.push_back({{"epoch", r.epoch}, {"steps", r.steps}});
    header["state"] = {{"adam_step", s.adam.step},
                       {"adam_slots", s.adam.m.size()},
                       {"next_epoch", s.next_epoch},
                       {"step", s.step},
                       {"log", log}};
  }

  const std::string head = header.dump();
  std::string out(kMagic, 4);
  put_le(out, kVersion);
  put_le(out, static_cast<std::uint64_t>(head.size()));
  out += head;
  for (const auto& [name, t] : ck.params) put_doubles(out, t.data());
  if (ck.state) {
    for (const auto& m : ck.state->adam.m) put_doubles(out, m);
    for (const auto& v : ck.state->adam.v) put_doubles(out, v);
    for (const auto& r : ck.state->log) put_doubles(out, record_doubles(r));
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ContractError("cannot open checkpoint for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw ContractError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ContractError("cannot open checkpoint: " + path);
  const std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (in.size() < 16 || std::memcmp(in.data(), kMagic, 4) != 0) throw ContractError("not a checkpoint: " + path);
  std::size_t pos = 4;
  if (get_le<std::uint32_t>(in, pos) != kVersion) throw ContractError("unsupported checkpoint version");
  const auto head_len = get_le<std::uint64_t>(in, pos);
  if (head_len > in.size() - pos) throw ContractError("checkpoint truncated");

  Checkpoint ck;
  try {
    const auto header = json::parse(in.substr(pos, head_len));
    pos += head_len;
    ck.model = parse_model_config(header.at("model").dump(), ModelConfig{});
    if (header.contains("train")) ck.train_config = parse_train_config(header["train"].dump(), TrainConfig{});
    if (header.contains("task")) ck.task = parse_task_spec(header["task"].dump(), TaskSpec{});
    for (const auto& t : header.at("tensors")) {
      Shape shape = t.at("shape").get<Shape>();
      auto data = get_doubles(in, pos, shape_numel(shape));
      ck.params.add(t.at("name").get<std::string>(), Tensor::from_data(std::move(shape), std::move(data), true));
    }
    if (header.contains("state")) {
      const auto& s = header["state"];
      TrainState st;
      st.adam.step = s.at("adam_step").get<std::uint64_t>();
      st.next_epoch = s.at("next_epoch").get<std::size_t>();
      st.step = s.at("step").get<std::uint64_t>();
      const auto slots = s.at("adam_slots").get<std::size_t>();
      if (slots != 0 && slots != ck.params.size()) throw ContractError("checkpoint optimizer state mismatch");
      std::vector<std::size_t> sizes;
      for (const auto& [name, t] : ck.params) sizes.push_back(t.numel());
      for (std::size_t k = 0; k < slots; ++k) st.adam.m.push_back(get_doubles(in, pos, sizes[k]));
      for (std::size_t k = 0; k < slots; ++k) st.adam.v.push_back(get_doubles(in, pos, sizes[k]));
      for (const auto& r : s.at("log")) {
        EpochRecord rec;
        rec.epoch = r.at("epoch").get<std::size_t>();
        rec.steps = r.at("steps").get<std::uint64_t>();
        const auto d = get_doubles(in, pos, 5);
        rec.lr = d[0];
        rec.train_loss = d[1];
        rec.eval.token_accuracy = d[2];
        rec.eval.exact_match = d[3];
        rec.eval.cross_entropy = d[4];
        st.log.push_back(rec);
      }
      ck.state = std::move(st);
    }
  } catch (const json::exception& e) {
    throw ContractError(std::string("malformed checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw ContractError(std::string("checkpoint config invalid: ") + e.what());
  }
  if (pos != in.size()) throw ContractError("checkpoint has trailing bytes");
  return ck;
}

}  // namespace zodiac
