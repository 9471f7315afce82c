fn main() {
    let threads = std::env::var("NLFIT_THREADS").ok();
    let code = nlfit_cli::main_with(
        std::env::args_os(),
        threads.as_deref(),
        &mut std::io::stdout().lock(),
        &mut std::io::stderr().lock(),
    );
    std::process::exit(code);
}
