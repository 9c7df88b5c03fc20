#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <json.hpp>

#include "stmsim/commands.hpp"
#include "stmsim/config.hpp"

using namespace stmsim;
namespace fs = std::filesystem;

namespace {

const std::string kExe = STM_SIM_EXE;
const fs::path kConfigs = STMSIM_CONFIG_DIR;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "stmsim_cli_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path write_cfg(const fs::path& dir, const std::string& name, const std::string& text) {
  const fs::path p = dir / name;
  std::ofstream(p) << text;
  return p;
}

struct Proc {
  int code = -1;
  std::string err;
};

// Runs the tool through the shell; `env` is prepended verbatim.
Proc run_tool(const std::string& args, const fs::path& log_dir, const std::string& env = "") {
  const fs::path err = log_dir / "stderr.txt";
  const std::string cmd = env + " '" + kExe + "' " + args + " >/dev/null 2>'" + err.string() + "'";
  const int raw = std::system(cmd.c_str());
  Proc p;
  p.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  p.err = slurp(err);
  return p;
}

std::string first_line(const fs::path& p) {
  std::ifstream f(p);
  std::string line;
  std::getline(f, line);
  return line;
}

// Relative path -> contents for every regular file under root.
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return out;
}

const char* kSmallBand = R"(command = band
band.omega_min = 0.5
band.omega_max = 1.5
band.omega_steps = 6
band.gap_samples = 21
solver.N = 4
)";

const char* kSmallIsofreq = R"(command = isofreq
isofreq.kx_steps = 5
isofreq.kx_min = -0.5
isofreq.kx_max = 0.5
solver.N = 4
)";

const char* kSmallScatter = R"(command = scatter
solver.N = 8
solver.auto_escalate = false
)";

const char* kSmallNonrecip = R"(command = nonrecip
solver.N = 8
solver.auto_escalate = false
)";

const char* kSmallFdtd = R"(command = fdtd
profile.delta_e = 0.1
profile.delta_m = 0.1
profile.kappa_s = 0.5
geometry.thickness = 1
fdtd.cells_per_wavelength = 20
fdtd.total_cycles = 22
fdtd.ramp_cycles = 4
fdtd.window_periods = 8
fdtd.max_frames = 3
fdtd.reference = false
)";

const char* kSmallSweep = R"(command = sweep
solver.N = 6
solver.auto_escalate = false
sweep.command = scatter
sweep.parameter = wave.theta
sweep.start = 40
sweep.stop = 140
sweep.steps = 3
)";

}  // namespace

// ---------------------------------------------------------------------------
// parse_config

TEST(Config, MinimalFileFillsDefaults) {
  const RunSpec r = parse_config((kConfigs / "minimal_band.cfg").string());
  EXPECT_EQ(r.command, Command::Band);
  EXPECT_DOUBLE_EQ(r.profile.delta_e, 0.2);
  EXPECT_DOUBLE_EQ(r.profile.eps_avg, 2.0);
  const auto all = config::resolved(r);
  EXPECT_EQ(all.size(), config::registry().size());
  for (const auto& [k, v] : all) {
    if (k != "output.dir") EXPECT_FALSE(v.empty()) << k;
  }
}

TEST(Config, UnknownKeyIsNamed) {
  try {
    parse_text("command = band\nprofile.deltae = 0.2\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "profile.deltae");
    EXPECT_NE(std::string(e.what()).find("profile.deltae"), std::string::npos);
  }
}

TEST(Config, RangeViolationCarriesKeyPath) {
  try {
    parse_text("command = scatter\n[profile]\ndelta_e = 1.5\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "profile.delta_e") << e.what();
  }
  try {
    parse_text("command = fdtd\nfdtd.courant = 1.1\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "fdtd.courant") << e.what();
  }
  EXPECT_THROW(parse_text("command = scatter\nwave.theta = abc\n"), ConfigError);
  EXPECT_THROW(parse_text("command = teleport\n"), ConfigError);
  EXPECT_THROW(parse_text("just some words\n"), ConfigError);
}

TEST(Config, ThetaSweepExpandsToThirtyFiveChildren) {
  const RunSpec r = parse_config((kConfigs / "theta_sweep.cfg").string());
  const auto children = expand_sweep(r);
  ASSERT_EQ(children.size(), 35u);
  for (std::size_t j = 0; j < children.size(); ++j) {
    EXPECT_EQ(children[j].command, Command::Scatter);
    EXPECT_NEAR(children[j].wave.theta_deg, 5.0 + 5.0 * j, 1e-12);
  }
}

TEST(Config, TextRoundTripIsExact) {
  RunSpec r = parse_text("command = nonrecip\nprofile.kappa_s = 2.6\nwave.theta = 0.1\n");
  const RunSpec back = parse_text(config::to_text(r));
  EXPECT_EQ(config::to_text(back), config::to_text(r));
  EXPECT_EQ(back.wave.theta_deg, 0.1);
}

TEST(Config, OutputDirectoryPrecedence) {
  RunSpec r = parse_text("command = scatter\noutput.dir = from_cfg\n");
  ::unsetenv("STM_SIM_OUT");
  EXPECT_EQ(resolve_output_dir(r, std::nullopt), fs::path("from_cfg"));
  ::setenv("STM_SIM_OUT", "from_env", 1);
  EXPECT_EQ(resolve_output_dir(r, std::nullopt), fs::path("from_env"));
  EXPECT_EQ(resolve_output_dir(r, std::string("from_flag")), fs::path("from_flag"));
  ::unsetenv("STM_SIM_OUT");
  r.output_dir.clear();
  EXPECT_EQ(resolve_output_dir(r, std::nullopt), fs::path("out") / "scatter");
}

// ---------------------------------------------------------------------------
// executable: exit codes and artifacts

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch("exit_codes");
  const fs::path ok = write_cfg(dir, "ok.cfg", kSmallBand);
  EXPECT_EQ(run_tool("band --config '" + ok.string() + "' --out '" + (dir / "a").string() + "'", dir).code, 0);

  const fs::path bad = write_cfg(dir, "bad.cfg", "command = band\nprofile.deltae = 0.2\n");
  const Proc p1 = run_tool("band --config '" + bad.string() + "' --out '" + (dir / "b").string() + "'", dir);
  EXPECT_EQ(p1.code, 1);
  EXPECT_NE(p1.err.find("profile.deltae"), std::string::npos) << p1.err;

  EXPECT_EQ(run_tool("teleport --config '" + ok.string() + "'", dir).code, 1);
  EXPECT_EQ(run_tool("band", dir).code, 1);
  EXPECT_EQ(run_tool("band --config '" + (dir / "missing.cfg").string() + "'", dir).code, 1);

  const fs::path sonic = dir / "sonic";
  const Proc p2 = run_tool("nonrecip --config '" + (kConfigs / "sonic_lowcap.cfg").string() + "' --out '" +
                               sonic.string() + "'",
                           dir);
  EXPECT_EQ(p2.code, 2);
  EXPECT_NE(p2.err.find("condition"), std::string::npos) << p2.err;
  const auto m = nlohmann::json::parse(slurp(sonic / "manifest.json"));
  EXPECT_EQ(m["exit_code"], 2);
  EXPECT_EQ(m["status"], "error");
  EXPECT_TRUE(m.contains("condition"));
}

TEST(Cli, EnvironmentOverridesOutputRoot) {
  const fs::path dir = scratch("env_out");
  const fs::path cfg = write_cfg(dir, "s.cfg", std::string(kSmallScatter) + "output.dir = " + (dir / "cfg_dir").string() + "\n");
  const fs::path env_dir = dir / "env_dir";
  ASSERT_EQ(run_tool("scatter --config '" + cfg.string() + "'", dir, "STM_SIM_OUT='" + env_dir.string() + "'").code, 0);
  EXPECT_TRUE(fs::exists(env_dir / "manifest.json"));
  EXPECT_FALSE(fs::exists(dir / "cfg_dir"));
  const fs::path flag_dir = dir / "flag_dir";
  ASSERT_EQ(run_tool("scatter --config '" + cfg.string() + "' --out '" + flag_dir.string() + "'", dir,
                     "STM_SIM_OUT='" + env_dir.string() + "_unused'")
                .code,
            0);
  EXPECT_TRUE(fs::exists(flag_dir / "manifest.json"));
}

TEST(Cli, ManifestEchoesEveryResolvedKey) {
  const fs::path dir = scratch("manifest_keys");
  ASSERT_EQ(run_tool("band --config '" + (kConfigs / "minimal_band.cfg").string() + "' --out '" +
                         (dir / "o").string() + "' --seed 42",
                     dir)
                .code,
            0);
  const auto m = nlohmann::json::parse(slurp(dir / "o" / "manifest.json"));
  EXPECT_EQ(m["tool"], "stm-sim");
  EXPECT_EQ(m["version"], kToolVersion);
  EXPECT_EQ(m["seed"], 42);
  EXPECT_EQ(m["config"].size(), config::registry().size());
  for (const config::Key& k : config::registry()) EXPECT_TRUE(m["config"].contains(k.name)) << k.name;
  EXPECT_EQ(m["config"]["profile.delta_e"], "0.20000000000000001");
  EXPECT_TRUE(m.contains("warnings"));
}

TEST(Cli, GoldenCsvHeaders) {
  const fs::path dir = scratch("headers");
  const std::map<std::string, const char*> cfgs{
      {"band", kSmallBand},       {"isofreq", kSmallIsofreq}, {"scatter", kSmallScatter},
      {"nonrecip", kSmallNonrecip}, {"fdtd", kSmallFdtd},     {"sweep", kSmallSweep}};
  for (const auto& [cmd, text] : cfgs) {
    const fs::path cfg = write_cfg(dir, cmd + ".cfg", text);
    ASSERT_EQ(run_tool(cmd + " --config '" + cfg.string() + "' --out '" + (dir / cmd).string() + "'", dir).code, 0)
        << cmd;
  }
  const std::string power = "n,omega_n,k_z_n,propagating,P_refl_n,P_trans_n";
  EXPECT_EQ(first_line(dir / "band" / "band.csv"),
            "omega_over_omega_s,kappa_over_kappa_s,branch_id,harmonic_n,im_kappa,vg_x,vg_z");
  EXPECT_EQ(first_line(dir / "isofreq" / "isofreq.csv"),
            "omega_over_omega_s,k_x,kappa_over_kappa_s,branch_id,harmonic_n,im_kappa,class,vg_x,vg_z");
  EXPECT_EQ(first_line(dir / "scatter" / "power.csv"), power);
  EXPECT_EQ(first_line(dir / "nonrecip" / "power_forward.csv"), power);
  EXPECT_EQ(first_line(dir / "nonrecip" / "power_backward.csv"), power);
  EXPECT_EQ(first_line(dir / "fdtd" / "probes.csv"),
            "step,time,reflection_flux,transmission_flux,transmitted_point_e_re,transmitted_point_e_im,"
            "transmitted_point_h_re,transmitted_point_h_im,incident_point_e_re,incident_point_e_im,"
            "incident_point_h_re,incident_point_h_im");
  EXPECT_EQ(first_line(dir / "fdtd" / "spectrum.csv"), "probe,harmonic_n,omega,e_re,e_im,e_abs,h_re,h_im");
  EXPECT_EQ(first_line(dir / "fdtd" / "flux.csv"), "plane,x_wavelengths,flux,flux_reference");
  EXPECT_EQ(first_line(dir / "sweep" / "sweep.csv"),
            "index,parameter,value,status,reflected,transmitted,absorption,truncation,condition");
  for (const char* f : {"band.svg", "summary.json"}) EXPECT_TRUE(fs::exists(dir / "band" / f)) << f;
  EXPECT_TRUE(fs::exists(dir / "isofreq" / "isofreq.svg"));
  EXPECT_TRUE(fs::exists(dir / "scatter" / "scatter.json"));
  for (const char* f : {"nonrecip.json", "absorption.svg"}) EXPECT_TRUE(fs::exists(dir / "nonrecip" / f)) << f;
  EXPECT_TRUE(fs::exists(dir / "fdtd" / "fdtd.json"));
  EXPECT_EQ(first_line(dir / "fdtd" / "frames" / "frame_0000.pgm"), "P5");
  for (int j = 0; j < 3; ++j) {
    char name[32];
    std::snprintf(name, sizeof name, "child_%03d", j);
    EXPECT_TRUE(fs::exists(dir / "sweep" / name / "manifest.json")) << name;
  }
}

TEST(Cli, ManifestRoundTripIsBitwise) {
  const fs::path dir = scratch("round_trip");
  const std::map<std::string, const char*> cfgs{
      {"band", kSmallBand},       {"isofreq", kSmallIsofreq}, {"scatter", kSmallScatter},
      {"nonrecip", kSmallNonrecip}, {"fdtd", kSmallFdtd},     {"sweep", kSmallSweep}};
  for (const auto& [cmd, text] : cfgs) {
    const fs::path cfg = write_cfg(dir, cmd + ".cfg", text);
    const fs::path a = dir / (cmd + "_a"), b = dir / (cmd + "_b");
    ASSERT_EQ(run_tool(cmd + " --config '" + cfg.string() + "' --out '" + a.string() + "' --seed 7 --jobs 2", dir).code, 0)
        << cmd;
    ASSERT_EQ(run_tool(cmd + " --config '" + (a / "manifest.json").string() + "' --out '" + b.string() +
                           "' --seed 7 --jobs 3",
                       dir)
                  .code,
              0)
        << cmd;
    const auto ta = tree(a), tb = tree(b);
    ASSERT_EQ(ta.size(), tb.size()) << cmd;
    for (const auto& [name, content] : ta) {
      ASSERT_TRUE(tb.count(name)) << cmd << ": " << name;
      EXPECT_TRUE(tb.at(name) == content) << cmd << ": " << name << " differs";
    }
  }
}
