#include "cmml/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cmml {

namespace {

void write_param_block(std::ofstream& out, const std::string& tag, const ParamMap& params) {
  out << tag << ' ' << params.size() << "\n";
  char buf[40];
  for (const auto& [name, p] : params) {
    out << "array " << name << ' ' << p.rows() << ' ' << p.cols() << "\n";
    const auto& v = p.values();
    for (int r = 0; r < p.rows(); ++r) {
      for (int c = 0; c < p.cols(); ++c) {
        std::snprintf(buf, sizeof buf, "%a", v[static_cast<std::size_t>(r) * p.cols() + c]);
        out << buf << (c + 1 == p.cols() ? "" : " ");
      }
      out << "\n";
    }
  }
}

ParamMap read_param_block(std::ifstream& in, const std::string& tag) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("checkpoint: truncated before " + tag);
  std::istringstream head(line);
  std::string got;
  std::size_t count = 0;
  head >> got >> count;
  if (got != tag) throw std::runtime_error("checkpoint: expected '" + tag + "', got '" + got + "'");
  ParamMap params;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw std::runtime_error("checkpoint: truncated array header");
    std::istringstream header(line);
    std::string kind, name;
    int rows = 0, cols = 0;
    header >> kind >> name >> rows >> cols;
    if (kind != "array" || rows <= 0 || cols <= 0) {
      throw std::runtime_error("checkpoint: bad array header '" + line + "'");
    }
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(rows) * cols);
    for (int r = 0; r < rows; ++r) {
      if (!std::getline(in, line)) throw std::runtime_error("checkpoint: truncated values");
      const char* s = line.c_str();
      char* end = nullptr;
      for (int c = 0; c < cols; ++c) {
        double v = std::strtod(s, &end);
        if (end == s) throw std::runtime_error("checkpoint: bad value row for " + name);
        values.push_back(v);
        s = end;
      }
    }
    params.emplace(name, Tensor(rows, cols, std::move(values)));
  }
  return params;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  if (checkpoint.config_json.find('\n') != std::string::npos) {
    throw std::invalid_argument("save_checkpoint: config snapshot must be a single line");
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << "cmml-checkpoint v" << checkpoint.version << "\n";
  out << "epoch " << checkpoint.epoch << "\n";
  out << "config " << checkpoint.config_json << "\n";
  write_param_block(out, "params", checkpoint.params);
  write_param_block(out, "adam_m", checkpoint.adam_m);
  write_param_block(out, "adam_v", checkpoint.adam_v);
  out << "adam_t " << checkpoint.adam_t << "\n";
  out << "end\n";
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  Checkpoint ck;
  std::string line;
  if (!std::getline(in, line) || line.rfind("cmml-checkpoint v", 0) != 0) {
    throw std::runtime_error("load_checkpoint: " + path + " is not a cmml checkpoint");
  }
  ck.version = std::atoi(line.c_str() + 17);
  if (ck.version != 1) {
    throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(ck.version));
  }
  if (!std::getline(in, line) || line.rfind("epoch ", 0) != 0) {
    throw std::runtime_error("load_checkpoint: missing epoch line");
  }
  ck.epoch = std::atoi(line.c_str() + 6);
  if (!std::getline(in, line) || line.rfind("config ", 0) != 0) {
    throw std::runtime_error("load_checkpoint: missing config line");
  }
  ck.config_json = line.substr(7);
  ck.params = read_param_block(in, "params");
  ck.adam_m = read_param_block(in, "adam_m");
  ck.adam_v = read_param_block(in, "adam_v");
  if (!std::getline(in, line) || line.rfind("adam_t ", 0) != 0) {
    throw std::runtime_error("load_checkpoint: missing adam_t line");
  }
  ck.adam_t = std::atoll(line.c_str() + 7);
  if (!std::getline(in, line) || line != "end") {
    throw std::runtime_error("load_checkpoint: missing end marker");
  }
  return ck;
}

}  // namespace cmml
