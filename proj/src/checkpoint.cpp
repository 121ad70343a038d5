#include "hf/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <memory>

#include <json.hpp>

#include "hf/rng.hpp"

namespace hf::model {

using json = nlohmann::json;

namespace {

constexpr char kMagic[4] = {'H', 'F', 'C', 'K'};
constexpr uint32_t kVersion = 1;

const char* attention_token(Attention a) {
  switch (a) {
    case Attention::none: return "none";
    case Attention::channel: return "channel";
    case Attention::position: return "position";
    case Attention::dual: return "dual";
  }
  return "none";
}

Attention attention_from(const std::string& s) {
  if (s == "none") return Attention::none;
  if (s == "channel") return Attention::channel;
  if (s == "position") return Attention::position;
  if (s == "dual") return Attention::dual;
  fail(ErrorCode::config, "checkpoint: unknown attention mode '" + s + "'");
}

json config_to_json(const TopologyConfig& c) {
  return json{{"topology", c.name()},
              {"alpha", c.alpha},
              {"attention", attention_token(c.attention)},
              {"base_width", c.base_width},
              {"depth", c.depth},
              {"in_slices", c.in_slices},
              {"classes", c.classes},
              {"averaged_attention", c.averaged_attention},
              {"instance_norm", c.instance_norm}};
}

TopologyConfig config_from_json(const json& j) {
  TopologyConfig c = TopologyConfig::from_name(j.at("topology").get<std::string>());
  c.alpha = j.at("alpha").get<double>();
  c.attention = attention_from(j.at("attention").get<std::string>());
  c.base_width = j.at("base_width").get<int>();
  c.depth = j.at("depth").get<int>();
  c.in_slices = j.at("in_slices").get<int>();
  c.classes = j.at("classes").get<int>();
  c.averaged_attention = j.at("averaged_attention").get<bool>();
  c.instance_norm = j.at("instance_norm").get<bool>();
  return c;
}

bool config_equal(const TopologyConfig& a, const TopologyConfig& b) {
  return a.family == b.family && a.tcl_count == b.tcl_count && a.alpha == b.alpha &&
         a.attention == b.attention && a.base_width == b.base_width &&
         a.depth == b.depth && a.in_slices == b.in_slices && a.classes == b.classes &&
         a.averaged_attention == b.averaged_attention &&
         a.instance_norm == b.instance_norm;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void save_checkpoint(const std::string& path, const ModelState<float>& m) {
  json header;
  header["version"] = kVersion;
  header["config"] = config_to_json(m.cfg);
  json params = json::array();
  for (const nn::Param<float>* p : m.net.params())
    params.push_back(json{{"name", p->name},
                          {"group", nn::group_name(p->group)},
                          {"shape", p->shape},
                          {"count", p->size()}});
  header["params"] = params;
  std::string hs = header.dump();

  File f(std::fopen(path.c_str(), "wb"));
  require(f != nullptr, ErrorCode::io, "cannot open " + path);
  uint64_t hlen = hs.size();
  if (std::fwrite(kMagic, 1, 4, f.get()) != 4 ||
      std::fwrite(&hlen, 8, 1, f.get()) != 1 ||
      std::fwrite(hs.data(), 1, hs.size(), f.get()) != hs.size())
    fail(ErrorCode::io, "short write on " + path);
  for (const nn::Param<float>* p : m.net.params())
    if (std::fwrite(p->value.data(), 4, p->size(), f.get()) != p->size())
      fail(ErrorCode::io, "short write on " + path);
}

ModelState<float> load_checkpoint(const std::string& path,
                                  const TopologyConfig* expected) {
  File f(std::fopen(path.c_str(), "rb"));
  require(f != nullptr, ErrorCode::io, "cannot open " + path);
  char magic[4];
  uint64_t hlen = 0;
  if (std::fread(magic, 1, 4, f.get()) != 4 || std::fread(&hlen, 8, 1, f.get()) != 1)
    fail(ErrorCode::truncated, path + ": checkpoint shorter than header");
  require(std::memcmp(magic, kMagic, 4) == 0, ErrorCode::bad_magic,
          path + ": not an HFCK checkpoint");
  require(hlen < (uint64_t(1) << 30), ErrorCode::dim_overflow,
          path + ": header length out of range");
  std::string hs(hlen, '\0');
  if (std::fread(hs.data(), 1, hlen, f.get()) != hlen)
    fail(ErrorCode::truncated, path + ": truncated header");
  json header;
  try {
    header = json::parse(hs);
  } catch (const std::exception& e) {
    fail(ErrorCode::io, path + ": bad checkpoint header: " + e.what());
  }
  require(header.at("version").get<uint32_t>() == kVersion, ErrorCode::config,
          path + ": unsupported checkpoint version");
  TopologyConfig cfg = config_from_json(header.at("config"));
  if (expected)
    require(config_equal(cfg, *expected), ErrorCode::config,
            path + ": checkpoint topology '" + cfg.name() +
                "' disagrees with the requested topology '" + expected->name() + "'");

  ModelState<float> m = build_topology<float>(cfg);
  const auto& params = header.at("params");
  require(params.size() == m.net.params().size(), ErrorCode::config,
          path + ": parameter directory size mismatch");
  size_t i = 0;
  for (nn::Param<float>* p : m.net.params()) {
    const json& e = params.at(i++);
    require(e.at("name").get<std::string>() == p->name, ErrorCode::config,
            path + ": parameter order mismatch at " + p->name);
    require(e.at("count").get<size_t>() == p->size(), ErrorCode::config,
            path + ": parameter size mismatch at " + p->name);
    if (std::fread(p->value.data(), 4, p->size(), f.get()) != p->size())
      fail(ErrorCode::truncated, path + ": truncated payload at " + p->name);
  }
  return m;
}

uint64_t file_hash(const std::string& path) {
  File f(std::fopen(path.c_str(), "rb"));
  require(f != nullptr, ErrorCode::io, "cannot open " + path);
  uint64_t h = 1469598103934665603ull;
  char buf[65536];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), f.get())) > 0) h = fnv1a64(buf, n, h);
  return h;
}

}  // namespace hf::model
