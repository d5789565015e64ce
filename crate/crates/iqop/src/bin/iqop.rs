fn main() {
    if let Err(e) = iqop::cli::run() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
