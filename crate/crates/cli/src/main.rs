fn main() {
    if let Err(failure) = meg_cli::run(std::env::args_os(), std::env::vars()) {
        if !failure.already_reported() {
            eprintln!("error: {failure}");
        }
        std::process::exit(failure.code);
    }
}
