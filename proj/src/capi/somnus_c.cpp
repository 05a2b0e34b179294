#include "somnus.h"

#include <exception>
#include <string>

#include "somnus/common.hpp"
#include "somnus/run/commands.hpp"
#include "somnus/run/config.hpp"

struct somnus_config {
  somnus::run::RunConfig cfg;
  std::string scratch;  // backs the pointer handed out by somnus_config_get
};

namespace {

thread_local std::string g_last_error;

somnus_status status_from(somnus::ErrorCode code) {
  using somnus::ErrorCode;
  switch (code) {
    case ErrorCode::invalid_argument: return SOMNUS_INVALID_ARGUMENT;
    case ErrorCode::io_error: return SOMNUS_IO_ERROR;
    case ErrorCode::corrupt_data: return SOMNUS_CORRUPT_DATA;
    case ErrorCode::missing_dependency: return SOMNUS_MISSING_DEPENDENCY;
    case ErrorCode::contract_violation: return SOMNUS_CONTRACT_VIOLATION;
    case ErrorCode::internal: return SOMNUS_INTERNAL;
  }
  return SOMNUS_INTERNAL;
}

template <typename F>
somnus_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return SOMNUS_OK;
  } catch (const somnus::Error& e) {
    g_last_error = e.what();
    return status_from(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return SOMNUS_INTERNAL;
  } catch (...) {
    g_last_error = "unknown failure";
    return SOMNUS_INTERNAL;
  }
}

somnus_status fail_invalid(const char* msg) {
  g_last_error = msg;
  return SOMNUS_INVALID_ARGUMENT;
}

}  // namespace

extern "C" {

const char* somnus_version(void) { return "0.1.0"; }

const char* somnus_last_error(void) { return g_last_error.c_str(); }

somnus_status somnus_config_create(somnus_config** out_cfg) {
  if (!out_cfg) return fail_invalid("out_cfg must not be null");
  *out_cfg = nullptr;
  return guarded([&] { *out_cfg = new somnus_config(); });
}

void somnus_config_destroy(somnus_config* cfg) { delete cfg; }

somnus_status somnus_config_load_file(somnus_config* cfg, const char* path) {
  if (!cfg) return fail_invalid("cfg must not be null");
  if (!path) return fail_invalid("path must not be null");
  return guarded([&] { cfg->cfg.load_file(path); });
}

somnus_status somnus_config_set(somnus_config* cfg, const char* dotted_key,
                                const char* value) {
  if (!cfg) return fail_invalid("cfg must not be null");
  if (!dotted_key || !value)
    return fail_invalid("dotted_key and value must not be null");
  return guarded([&] { cfg->cfg.set(dotted_key, value); });
}

somnus_status somnus_config_get(somnus_config* cfg, const char* dotted_key,
                                const char** out_json) {
  if (!cfg) return fail_invalid("cfg must not be null");
  if (!dotted_key || !out_json)
    return fail_invalid("dotted_key and out_json must not be null");
  return guarded([&] {
    cfg->scratch = cfg->cfg.value_at(dotted_key).dump();
    *out_json = cfg->scratch.c_str();
  });
}

somnus_status somnus_run_command(somnus_config* cfg, const char* command) {
  if (!cfg) return fail_invalid("cfg must not be null");
  if (!command) return fail_invalid("command must not be null");
  return guarded([&] { somnus::run::run_command(cfg->cfg, command); });
}

}  // extern "C"
