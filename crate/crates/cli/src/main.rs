fn main() {
    let args: Vec<String> = std::env::args().collect();
    if let Err(e) = aerodeblur_cli::app::run(args) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
