fn main() {
    guardqa::telemetry::init_tracing(std::env::var_os("GUARDQA_LOG_JSON").is_some());
    let code = guardqa::cli::run(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
