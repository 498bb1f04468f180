#include "motionlab/cli/config.hpp"

#include "motionlab/error.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace motionlab::cli {
namespace {

using json = nlohmann::ordered_json;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw Error(ErrorCode::ConfigError, key + ": '" + text + "' is not a number");
  }
  return v;
}

std::size_t parse_count(const std::string& key, const std::string& text) {
  std::size_t v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw Error(ErrorCode::ConfigError, key + ": '" + text + "' is not a non-negative integer");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw Error(ErrorCode::ConfigError, key + ": expected true or false, got '" + text + "'");
}

std::array<std::size_t, 3> parse_channels(const std::string& key, const std::string& text) {
  std::array<std::size_t, 3> out{};
  std::stringstream ss(text);
  std::string part;
  std::size_t i = 0;
  while (std::getline(ss, part, ',')) {
    if (i == 3) break;
    out[i++] = parse_count(key, trim(part));
  }
  if (i != 3 || ss.rdbuf()->in_avail() > 0) {
    throw Error(ErrorCode::ConfigError, key + ": expected three comma-separated widths");
  }
  return out;
}

// One accessor pair per key, in the canonical order used by to_text.
struct Field {
  std::function<std::string(const Config&)> get;
  std::function<void(Config&, const std::string& key, const std::string& value)> set;
};

template <typename T>
Field count_field(T Config::*member) {
  return {[member](const Config& c) { return std::to_string(c.*member); },
          [member](Config& c, const std::string& k, const std::string& v) {
            c.*member = static_cast<T>(parse_count(k, v));
          }};
}

Field double_field(double Config::*member) {
  return {[member](const Config& c) { return format_double(c.*member); },
          [member](Config& c, const std::string& k, const std::string& v) { c.*member = parse_double(k, v); }};
}

Field bool_field(bool Config::*member) {
  return {[member](const Config& c) { return std::string(c.*member ? "true" : "false"); },
          [member](Config& c, const std::string& k, const std::string& v) { c.*member = parse_bool(k, v); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    t.emplace_back("past_frames", count_field(&Config::past_frames));
    t.emplace_back("future_frames", count_field(&Config::future_frames));
    t.emplace_back("hidden", count_field(&Config::hidden));
    t.emplace_back("layers", count_field(&Config::layers));
    t.emplace_back("ffnn", count_field(&Config::ffnn));
    t.emplace_back("experts", count_field(&Config::experts));
    t.emplace_back("conv_channels",
                   Field{[](const Config& c) {
                           return std::to_string(c.conv_channels[0]) + "," + std::to_string(c.conv_channels[1]) +
                                  "," + std::to_string(c.conv_channels[2]);
                         },
                         [](Config& c, const std::string& k, const std::string& v) {
                           c.conv_channels = parse_channels(k, v);
                         }});
    t.emplace_back("dropout", double_field(&Config::dropout));
    t.emplace_back("lr", double_field(&Config::lr));
    t.emplace_back("decay_every", count_field(&Config::decay_every));
    t.emplace_back("decay_factor", double_field(&Config::decay_factor));
    t.emplace_back("epochs", count_field(&Config::epochs));
    t.emplace_back("batch", count_field(&Config::batch));
    t.emplace_back("beta", double_field(&Config::beta));
    t.emplace_back("lambda", double_field(&Config::lambda));
    t.emplace_back("clip_norm", double_field(&Config::clip_norm));
    t.emplace_back("seed", count_field(&Config::seed));
    t.emplace_back("no_lie", bool_field(&Config::no_lie));
    t.emplace_back("no_mgn", bool_field(&Config::no_mgn));
    t.emplace_back("no_gr", bool_field(&Config::no_gr));
    t.emplace_back("gr_mode", Field{[](const Config& c) { return models::to_string(c.gr_mode); },
                                    [](Config& c, const std::string&, const std::string& v) {
                                      c.gr_mode = models::gr_mode_from_string(v);
                                    }});
    t.emplace_back("mae_mode", Field{[](const Config& c) { return to_string(c.mae_mode); },
                                     [](Config& c, const std::string&, const std::string& v) {
                                       c.mae_mode = mae_mode_from_string(v);
                                     }});
    t.emplace_back("optimizer", Field{[](const Config& c) { return c.optimizer; },
                                      [](Config& c, const std::string&, const std::string& v) { c.optimizer = v; }});
    t.emplace_back("momentum", double_field(&Config::momentum));
    t.emplace_back("window_stride", count_field(&Config::window_stride));
    t.emplace_back("max_steps", count_field(&Config::max_steps));
    t.emplace_back("divergence_threshold", double_field(&Config::divergence_threshold));
    return t;
  }();
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& [name, f] : fields()) {
    if (name == key) return &f;
  }
  return nullptr;
}

void check(const Config& c) {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::ConfigError, msg); };
  if (c.past_frames != 9 && c.past_frames != 27 && c.past_frames != 54) {
    fail("past_frames must be 9, 27 or 54, got " + std::to_string(c.past_frames));
  }
  if (c.future_frames == 0) fail("future_frames must be positive");
  if (c.hidden == 0 || c.layers == 0 || c.ffnn == 0 || c.experts == 0) {
    fail("hidden, layers, ffnn and experts must be positive");
  }
  for (std::size_t w : c.conv_channels) {
    if (w == 0) fail("conv_channels must be positive");
  }
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (!(c.lr > 0.0)) fail("lr must be positive");
  if (c.decay_every == 0 || !(c.decay_factor > 0.0 && c.decay_factor <= 1.0)) {
    fail("decay_every must be positive and decay_factor in (0, 1]");
  }
  if (c.epochs == 0 || c.batch == 0 || c.window_stride == 0) {
    fail("epochs, batch and window_stride must be positive");
  }
  if (!(c.beta >= 0.0) || !(c.lambda >= 0.0) || !(c.clip_norm >= 0.0) || !(c.momentum >= 0.0)) {
    fail("beta, lambda, clip_norm and momentum must be non-negative");
  }
  if (c.optimizer != "sgd" && c.optimizer != "adam") fail("optimizer must be sgd or adam");
  if (!(c.divergence_threshold > 0.0)) fail("divergence_threshold must be positive");
}

}  // namespace

void validate(const Config& c) { check(c); }

Config preset(const std::string& name) {
  Config c;
  if (name == "default") return c;
  if (name == "toy" || name == "bench" || name == "overfit") {
    c.hidden = 64;
    c.ffnn = 64;
    c.conv_channels = {8, 16, 16};
    c.optimizer = "adam";
    c.epochs = 200;
    // One window per 80-frame benchmark sequence keeps a toy run to minutes.
    c.window_stride = 64;
    if (name == "bench") c.epochs = 60;
    if (name == "overfit") {
      c.dropout = 0.0;
      c.epochs = 2000;
      c.max_steps = 2000;
      c.lr = 0.01;
      c.decay_every = 150;
      c.decay_factor = 0.6;
    }
    return c;
  }
  throw Error(ErrorCode::ConfigError, "unknown preset '" + name + "'");
}

Config parse_config(const std::string& text, Config base) {
  std::stringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::ConfigError, "line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "preset") {
        base = preset(value);
        continue;
      }
      const Field* f = find_field(key);
      if (!f) throw Error(ErrorCode::ConfigError, "unknown key '" + key + "'");
      f->set(base, key, value);
    } catch (const Error& e) {
      // Re-raise with the line number in front of the original detail.
      const std::string what = e.what();
      const auto colon = what.find(": ");
      throw Error(ErrorCode::ConfigError, "line " + std::to_string(line_no) + ": " +
                                              (colon == std::string::npos ? what : what.substr(colon + 2)));
    }
  }
  validate(base);
  return base;
}

Config load_config(const std::string& path, Config base) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string to_text(const Config& c) {
  std::string out;
  for (const auto& [name, f] : fields()) out += name + " = " + f.get(c) + "\n";
  return out;
}

nlohmann::ordered_json to_json(const Config& c) {
  json j = json::object();
  for (const auto& [name, f] : fields()) j[name] = f.get(c);
  return j;
}

Config config_from_json(const nlohmann::ordered_json& j) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, "config must be a JSON object");
  Config c;
  for (const auto& [key, value] : j.items()) {
    const Field* f = find_field(key);
    if (!f) throw Error(ErrorCode::ConfigError, "unknown key '" + key + "'");
    if (!value.is_string()) throw Error(ErrorCode::ConfigError, key + ": expected a string value");
    f->set(c, key, value.get<std::string>());
  }
  validate(c);
  return c;
}

models::NetworkConfig network_config(const Config& c) {
  models::NetworkConfig n;
  n.hidden = c.hidden;
  n.layers = c.layers;
  n.ffnn = c.ffnn;
  n.experts = c.experts;
  n.dropout = c.dropout;
  n.conv_channels = c.conv_channels;
  n.gr_mode = c.gr_mode;
  n.use_mgn = !c.no_mgn;
  n.use_gr = !c.no_gr;
  return n;
}

models::LossWeights loss_weights(const Config& c) {
  models::LossWeights w;
  w.beta = c.beta;
  w.lambda = c.lambda;
  w.no_lie = c.no_lie;
  return w;
}

}  // namespace motionlab::cli
