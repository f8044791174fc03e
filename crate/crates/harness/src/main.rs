fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    std::process::exit(ctxcorr_harness::cli::cli_main(&args));
}
