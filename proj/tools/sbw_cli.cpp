// sbw: command-line front end for the Sobolev-Burgers workbench.
//
// Exit codes: 0 success, 1 invalid input, 2 numerical failure or a failed
// property check.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sbw/checks.hpp"
#include "sbw/io.hpp"
#include "sbw/parallel.hpp"
#include "sbw/pde.hpp"
#include "sbw/temporal.hpp"
#include "sbw/workbench.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// "re" or "re:im"
sbw::cplx parse_cplx(const std::string& s) {
  std::size_t used = 0;
  try {
    const auto colon = s.find(':');
    const double re = std::stod(s.substr(0, colon), &used);
    if (colon == std::string::npos) {
      if (used != s.size()) throw std::invalid_argument(s);
      return {re, 0.0};
    }
    const std::string tail = s.substr(colon + 1);
    const double im = std::stod(tail, &used);
    if (used != tail.size()) throw std::invalid_argument(s);
    return {re, im};
  } catch (const std::exception&) {
    throw sbw::ValidationError("not a number: '" + s + "' (use re or re:im)");
  }
}

std::vector<sbw::cplx> parse_cplx_list(const std::vector<std::string>& v) {
  std::vector<sbw::cplx> out;
  for (const auto& s : v) out.push_back(parse_cplx(s));
  return out;
}

void emit(const std::string& text, const std::string& path) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  sbw::write_file(path, text);
}

fs::path out_dir(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw sbw::ValidationError("cannot create " + dir + ": " + ec.message());
  return p;
}

int report_checks(const sbw::CheckReport& rep, const std::string& out) {
  emit(rep.to_json().dump(2) + "\n", out);
  if (!rep.pass()) {
    std::cerr << "failed: " << rep.failures() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sobolev-Burgers workbench"};
  app.require_subcommand(1);
  unsigned threads = 0;
  app.add_option("--threads", threads, "worker threads (0 = hardware)");

  std::string config, out;
  std::uint64_t seed = 1;
  std::size_t samples = 100000;
  unsigned refine = 2;

  auto* alg = app.add_subcommand("algebra-check", "Cayley-Dickson identities");
  alg->add_option("--seed", seed);
  alg->add_option("--samples", samples, "random elements per property");
  alg->add_option("--out", out, "JSON report path (default stdout)");

  std::string pde_file;
  auto* tr = app.add_subcommand("translate", "translate a real PDE system into hypercomplex form");
  tr->add_option("file", pde_file, "PDE description")->required();
  tr->add_option("--out", out, "JSON path (default stdout)");

  std::size_t atom_index = 0;
  bool no_dump = false;
  auto* ker = app.add_subcommand("kernel", "solve the kernel equation for one atom of a case");
  ker->add_option("--config", config)->required();
  ker->add_option("--atom", atom_index, "atom index");
  ker->add_option("--out", out, "output directory (default: trace on stdout only)");
  ker->add_flag("--no-dump", no_dump, "skip the binary kernel dump");

  unsigned m = 1;
  std::vector<std::string> lambda_s, c_s;
  double T = 1.0, tau = 1e-3;
  auto* ode = app.add_subcommand("ode", "solve the temporal Cauchy problem");
  ode->add_option("--m", m);
  ode->add_option("--lambda", lambda_s, "lambda_1 .. lambda_{m+1}, each re or re:im")->required();
  ode->add_option("--c", c_s, "c_0 .. c_{m-1} (default zeros)");
  ode->add_option("--T", T);
  ode->add_option("--tau", tau);
  ode->add_option("--out", out, "CSV path (default stdout)");

  auto* mc = app.add_subcommand("measure-check", "identities of the atomic random measure");
  mc->add_option("--seed", seed);
  mc->add_option("--samples", samples);
  mc->add_option("--out", out, "JSON report path (default stdout)");

  auto* as = app.add_subcommand("assemble", "assemble u and check the moment identity");
  as->add_option("--config", config)->required();
  as->add_option("--out", out, "output directory for diagonal dumps");

  auto* ver = app.add_subcommand("verify", "residual study under refinement");
  ver->add_option("--config", config)->required();
  ver->add_option("--refine", refine, "refinement levels after the base one");
  ver->add_option("--out", out, "output directory (default: CSV on stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (threads) sbw::set_thread_count(threads);

    if (*alg) return report_checks(sbw::algebra_checks(seed, samples), out);
    if (*mc) return report_checks(sbw::measure_checks(seed, samples), out);

    if (*tr) {
      const auto sys = sbw::parse_pde(sbw::read_file(pde_file));
      emit(sbw::to_json(sbw::translate_system(sys)).dump(2) + "\n", out);
      return 0;
    }

    if (*ode) {
      sbw::CauchySpec s;
      s.m = m;
      s.lambda = parse_cplx_list(lambda_s);
      s.c = c_s.empty() ? std::vector<sbw::cplx>(m, 0.0) : parse_cplx_list(c_s);
      s.T = T;
      s.tau = tau;
      const auto traj = sbw::solve_cauchy(s);
      const bool oracle = m == 1 && s.c[0] == sbw::cplx{};
      std::string csv = oracle ? "t,re_phi,im_phi,residual,re_oracle,im_oracle\n" : "t,re_phi,im_phi,residual\n";
      char buf[200];
      for (std::size_t k = 0; k < traj.size(); ++k) {
        const auto p = traj.phi(k);
        int n = std::snprintf(buf, sizeof buf, "%.10e,%.17e,%.17e,%.3e", traj.t[k], p.real(), p.imag(), traj.residual[k]);
        if (oracle) {
          const auto o = sbw::riccati_oracle(s.lambda[0], s.lambda[1], traj.t[k]);
          std::snprintf(buf + n, sizeof buf - n, ",%.17e,%.17e", o.real(), o.imag());
        }
        csv += buf;
        csv += '\n';
      }
      emit(csv, out);
      if (traj.blew_up) {
        std::cerr << "solution left the ceiling at t = " << traj.reached << "\n";
        return 2;
      }
      return 0;
    }

    const sbw::WorkbenchCase wc = sbw::load_case(config);

    if (*ker) {
      if (atom_index >= wc.atoms.size()) throw sbw::ValidationError("atom index out of range");
      const sbw::Atom atom = sbw::build_atom(wc.atoms[atom_index], wc.spec, wc.assembly);
      const json rep = {{"atom", atom_index}, {"trace", sbw::trace_json(atom.kernel->trace)}};
      if (out.empty()) {
        std::cout << rep.dump(2) << "\n";
      } else {
        const fs::path dir = out_dir(out);
        sbw::write_file((dir / "kernel_trace.json").string(), rep.dump(2) + "\n");
        if (!no_dump) sbw::write_field((dir / "kernel.sbwf").string(), atom.kernel->K());
      }
      return 0;
    }

    if (*as) {
      const sbw::SolutionField u = wc.assemble();
      const std::size_t k = u.times() - 1;
      const std::size_t mid = u.lattice().size() / 2;
      const auto mom = sbw::moment_identity(u, k, mid, mid, wc.samples);
      const json rep = {{"case", sbw::case_json(wc)},
                        {"time", u.t(k)},
                        {"point", mid},
                        {"moments", sbw::moment_json(mom)}};
      if (out.empty()) {
        std::cout << rep.dump(2) << "\n";
      } else {
        const fs::path dir = out_dir(out);
        sbw::write_file((dir / "assemble.json").string(), rep.dump(2) + "\n");
        sbw::write_field((dir / "diagonal_final.sbwf").string(), u.diagonal_field(k));
        sbw::write_field((dir / "expectation_final.sbwf").string(), u.expectation_field(k));
      }
      return mom.mc_agrees ? 0 : 2;
    }

    if (*ver) {
      const auto rep = sbw::residual_suite(wc, refine);
      if (out.empty()) {
        std::cout << rep.to_csv();
      } else {
        const fs::path dir = out_dir(out);
        sbw::write_file((dir / "residuals.csv").string(), rep.to_csv());
        sbw::write_file((dir / "residuals.json").string(), sbw::residual_json(rep).dump(2) + "\n");
      }
      return 0;
    }
  } catch (const sbw::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const sbw::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
