#include "nmf/common.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>
#include <sstream>

#include "nmf/parallel.hpp"

namespace nmf {

namespace {
unsigned g_thread_count = 0;
}

void set_thread_count(unsigned count) { g_thread_count = count; }

unsigned thread_count() {
  if (g_thread_count > 0) return g_thread_count;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

NodeSet parse_node_list(const std::string& text) {
  NodeSet nodes;
  std::string token;
  auto flush = [&] {
    if (token.empty()) return;
    int value = 0;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec != std::errc() || ptr != token.data() + token.size()) {
      throw InvalidArgument("bad node id '" + token + "'");
    }
    nodes.push_back(value);
    token.clear();
  };
  for (char c : text) {
    if (c == ',') {
      flush();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      token.push_back(c);
    }
  }
  flush();
  return nodes;
}

std::string format_node_list(const NodeSet& nodes) {
  std::ostringstream out;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (i) out << ',';
    out << nodes[i];
  }
  return out.str();
}

std::string format_double(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

}  // namespace nmf
