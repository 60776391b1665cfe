#include "grace/log.hpp"

#include <iostream>
#include <mutex>
#include <set>
#include <string>

namespace grace {

namespace {
std::mutex g_mutex;
WarningSink g_sink;
std::set<std::string, std::less<>> g_seen;
}  // namespace

WarningSink set_warning_sink(WarningSink sink) {
  std::lock_guard lock(g_mutex);
  std::swap(g_sink, sink);
  return sink;
}

void warn(std::string_view message) {
  std::lock_guard lock(g_mutex);
  if (g_sink)
    g_sink(message);
  else if (g_seen.emplace(message).second)
    std::cerr << "warning: " << message << '\n';
}

}  // namespace grace
