#include <iostream>
#include <map>
#include <memory>

#include "CLI11.hpp"
#include "hcfctx/cli/commands.hpp"

namespace cli = hcfctx::cli;

namespace {

struct Bound {
  const cli::CommandSpec* spec;
  CLI::App* app;
  std::map<std::string, std::string> text;
  std::map<std::string, bool> flags;
};

std::string default_text(const cli::OptionSpec& o) {
  if (o.def.is_null()) return "required";
  if (o.def.is_string()) return o.def.get<std::string>().empty() ? "none" : o.def.get<std::string>();
  if (o.def.is_array()) {
    std::string s;
    for (const auto& v : o.def) s += (s.empty() ? "" : ",") + (v.is_string() ? v.get<std::string>() : v.dump());
    return s.empty() ? "none" : s;
  }
  return o.def.dump();
}

int run_main(int argc, char** argv) {
  CLI::App app{"Context modeling from mobile logs: training, prediction, model selection and multi-party EM"};
  app.set_version_flag("--version", "hcfctx 1.0");
  std::string config_flag, replay_path, replay_out;
  app.add_option("--config", config_flag,
                 std::string("JSON config file (default: $") + cli::kConfigEnv + "); flags override it");
  app.add_option("--replay", replay_path, "rerun the command recorded in a manifest.json and verify its outputs");
  app.add_option("--replay-out", replay_out, "output directory for --replay (default: the recorded one)");
  app.require_subcommand(0, 1);
  app.footer(std::string("Config files hold an object per command (and an optional \"all\" section) "
                         "mapping option names to values.\nExit codes: 0 ok, 1 usage, 2 data error, 3 numerical "
                         "or protocol error."));

  std::vector<std::unique_ptr<Bound>> bound;
  for (const auto& spec : cli::command_specs()) {
    auto b = std::make_unique<Bound>();
    b->spec = &spec;
    b->app = app.add_subcommand(spec.name, spec.help);
    for (const auto& o : spec.options) {
      const std::string help = o.help + " [" + default_text(o) + "]";
      if (o.kind == cli::Kind::Bool) {
        b->app->add_flag("--" + o.name, b->flags[o.name], help);
      } else {
        b->app->add_option("--" + o.name, b->text[o.name], help);
      }
    }
    bound.push_back(std::move(b));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (!replay_path.empty()) {
    std::optional<cli::fs::path> out;
    if (!replay_out.empty()) out = replay_out;
    const auto r = cli::replay(replay_path, out);
    for (const auto& n : r.outcome.notes) std::cout << n << '\n';
    if (!r.identical()) {
      for (const auto& m : r.mismatched) std::cerr << "replay: " << m << " differs from the recorded run\n";
      return 3;
    }
    std::cout << "replay: " << r.compared << " outputs identical\n";
    return 0;
  }

  for (const auto& b : bound) {
    if (!b->app->parsed()) continue;
    std::map<std::string, std::string> given;
    for (const auto& o : b->spec->options) {
      if (b->app->get_option("--" + o.name)->count() == 0) continue;
      given[o.name] = o.kind == cli::Kind::Bool ? (b->flags[o.name] ? "true" : "false") : b->text[o.name];
    }
    cli::json file = cli::json::object();
    if (const auto path = cli::config_path(config_flag)) file = cli::load_config_file(*path);
    const cli::json cfg = cli::resolve_options(*b->spec, file, given);
    const auto outcome = cli::execute(b->spec->name, cfg);
    for (const auto& n : outcome.notes) std::cout << n << '\n';
    std::cout << "wrote " << cfg.at("out").get<std::string>() << "/manifest.json\n";
    return 0;
  }
  std::cerr << app.help();
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_main(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "hcfctx: " << e.what() << '\n';
    return cli::exit_code(e);
  }
}
