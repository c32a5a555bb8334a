use clap::Parser;

fn main() {
    let cli = arena_cli::Cli::parse();
    let code = arena_cli::dispatch(cli, &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
